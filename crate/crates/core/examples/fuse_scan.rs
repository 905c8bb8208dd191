//! Detection and score-level fusion over a simulated forest scan.
//!
//! ```text
//! cargo run --release --example fuse_scan -- [seed] [v_f]
//! ```

use aos_core::config::RunConfig;
use aos_core::pipeline::run_scan;

fn main() -> aos_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut config =
        RunConfig { seed: args.next().map_or(1, |s| s.parse().expect("seed is an integer")), ..RunConfig::default() };
    config.flight.v_f = args.next().map_or(6.0, |s| s.parse().expect("speed is a number"));
    config.forest.d = 0.045;
    config.detector.tau_det = 0.35;
    config.detector.person_intensity = 0.33;
    config.intensity.warm_fraction = 0.02;
    config.intensity.warm_min_height = 12.5;

    let run = run_scan(&config)?;
    let report = &run.evaluation.report;
    println!("{} integrals, {} persons", report.integrals, report.persons);
    println!("appearances {:?} of {:?}", report.appearances, report.coverage);
    println!("{:>11} {:>8} {:>5} {:>5} {:>9}", "method", "ratio", "true", "false", "gradient");
    for (name, m) in &report.methods {
        println!(
            "{name:>11} {:>8.3} {:>5} {:>5} {:>9.3}",
            m.separation_ratio,
            m.true_detections,
            m.false_detections,
            m.max_gradient.unwrap_or(f32::NAN)
        );
    }
    Ok(())
}
