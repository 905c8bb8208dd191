//! Closed-form occlusion densities against a Monte-Carlo ray caster.
//!
//! ```text
//! cargo run --release --example occlusion_oracle
//! ```

use aos_core::occlusion::{integrated_density, mc_occlusion_oracle, oblique_density, OcclusionParams};

fn main() -> aos_core::Result<()> {
    let rays = 1_000_000;
    println!("{:>6} {:>5} {:>5} {:>9} {:>9} {:>8}", "d", "l/o", "alpha", "formula", "oracle", "error");
    for (i, (d, layers, alpha)) in
        [(0.005, 100.0, 0.0), (0.01, 50.0, 30.0), (0.05, 10.0, 60.0), (0.01, 10.0, 0.0), (0.005, 50.0, 60.0)]
            .into_iter()
            .enumerate()
    {
        let params = OcclusionParams::new(d, 0.5, layers * 0.5, alpha)?;
        let nadir = integrated_density(&params)?;
        let formula = oblique_density(nadir, alpha)?.value();
        let oracle = mc_occlusion_oracle(i as u64, &params, rays)?;
        println!("{d:>6} {layers:>5} {alpha:>5} {formula:>9.4} {oracle:>9.4} {:>8.4}", (formula - oracle).abs());
    }

    // Visibility through a forest as the view tilts.
    let forest = OcclusionParams::new(0.045, 0.5, 25.0, 0.0)?;
    let nadir = integrated_density(&forest)?;
    for alpha in [0.0, 15.0, 30.0, 45.0] {
        let tilted = oblique_density(nadir, alpha)?;
        println!("alpha {alpha:>4}: occluded {:.3}, visible {:.3}", tilted.value(), tilted.visibility());
    }
    Ok(())
}
