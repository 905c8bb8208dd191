//! Classical and deferred integration of the same frames, and how their cost
//! depends on DEM size.
//!
//! ```text
//! cargo run --release --example integrate_deferred
//! ```

use aos_core::bench::{bench_rendering, check_equivalence, BenchPlan, Renderer};
use aos_core::config::RunConfig;
use aos_core::pipeline::simulate;

fn main() -> aos_core::Result<()> {
    let mut config = RunConfig::default();
    config.forest.d = 0.02;
    let sim = simulate(&config)?;
    let mut count = 0;
    let mut passes = 0;
    for integral in sim.integrals(&config)? {
        let integral = integral?;
        count += 1;
        passes = integral.geometry_passes;
        if count == 1 {
            let valid = integral.counts.iter().filter(|&&c| c > 0).count();
            println!(
                "first integral: {} frames, {valid} valid pixels, center x = {:.2}",
                integral.source_frames.len(),
                integral.center_pose.position[0]
            );
        }
    }
    println!("{count} integrals, {passes} geometry passes in total");

    for case in check_equivalence(3, 96, 7)? {
        println!("case {}: {} vertices, N = {}, max |diff| = {:.2e}", case.case, case.vertices, case.n, case.max_abs_diff);
    }

    let plan = BenchPlan { repetitions: 3, warmup: 1, resolution: 256, ..BenchPlan::default() };
    for row in bench_rendering(&[30], &[34_000, 600_000], &plan, 1)? {
        let name = match row.renderer {
            Renderer::Classical => "classical",
            Renderer::Deferred => "deferred",
        };
        println!("{name:>9} N = {} {:>7} vertices: {:.1} ms", row.n, row.vertices, row.mean_ms);
    }
    Ok(())
}
