//! Generates a forest, flies over it and writes a few frames as graymaps.
//!
//! ```text
//! cargo run --release --example simulate_forest -- /tmp/frames
//! ```

use std::path::PathBuf;

use aos_core::config::RunConfig;
use aos_core::flight::render_frame;
use aos_core::io::write_frame;
use aos_core::pipeline::simulate;

fn main() -> aos_core::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "simulated_frames".into()));
    let mut config = RunConfig::default();
    config.forest.d = 0.045;
    let sim = simulate(&config)?;
    println!(
        "{} occluders, {} persons, {} frames along {:.1} m",
        sim.scene.occluders.len(),
        sim.scene.persons.len(),
        sim.flight.frame_count(),
        sim.scenario.path.length()
    );
    for p in &sim.scene.persons {
        println!("person at ({:.2}, {:.2})", p.position[0], p.position[1]);
    }
    let step = sim.flight.frame_count() / 4;
    for k in (0..sim.flight.frame_count()).step_by(step.max(1)) {
        let frame = render_frame(&sim.scene, &sim.flight, k)?;
        let path = out.join(format!("frame_{k:05}.pgm"));
        write_frame(&path, &frame)?;
        let mean = frame.pixels.iter().sum::<f32>() / frame.pixels.len() as f32;
        println!("{} mean intensity {mean:.3}", path.display());
    }
    Ok(())
}
