//! Sampling quantities of a scan at several flight speeds.
//!
//! ```text
//! cargo run --example plan_speeds
//! cargo run --example plan_speeds -- 2 5 8
//! ```

use aos_core::sampling::{altitude_scaled_spacing, sweep_speeds, FlightParams};

fn main() -> aos_core::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("speeds are numbers")).collect();
    let speeds = if args.is_empty() { vec![1.0, 4.0, 6.0, 10.0] } else { args };
    let base = FlightParams::default();
    println!("h = {} m, fov = {} deg, d_i = {} m, t_p = {} s", base.h, base.fov, base.d_i, base.t_p);
    println!("{:>6} {:>7} {:>7} {:>7} {:>4} {:>7} {:>8}  warnings", "v_f", "d_f", "c_f", "o_f", "N", "t_f", "e_i cm");
    for p in sweep_speeds(base, &speeds)? {
        let mut flags = Vec::new();
        if p.warnings.gap {
            flags.push("gap");
        }
        if p.warnings.stale_integrals {
            flags.push("stale");
        }
        println!(
            "{:>6.1} {:>7.2} {:>7.2} {:>7.2} {:>4} {:>7.2} {:>8.2}  {}",
            p.params.v_f,
            p.d_f,
            p.c_f,
            p.o_f,
            p.n,
            p.t_f,
            p.e_i_max * 100.0,
            flags.join(",")
        );
    }
    // Same angular sampling at another altitude.
    println!("d_i at 1087 m keeping the 35 m density: {:.2} m", altitude_scaled_spacing(base.d_i, base.h, 1087.0)?);
    Ok(())
}
