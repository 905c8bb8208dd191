//! Command-line front end over `aos_core::stages`.
//!
//! Exit codes: 0 success, 1 usage, 2 domain or I/O error, 3 a `--check` failed.

use std::path::PathBuf;
use std::process::ExitCode;

use aos_core::config::RunConfig;
use aos_core::stages::{self, StageOutcome};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aos", version, about = "Synthetic-aperture scanning: planning, simulation, integration and fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sampling quantities for the swept flight speeds.
    Plan(Common),
    /// Occlusion formulas against the Monte-Carlo oracle.
    Occlusion(Common),
    /// Generate a forest scene and render the scan's frames.
    Simulate(Common),
    /// Compute sliding integrals from simulated frames.
    Integrate {
        #[command(flatten)]
        common: Common,
        /// Also time both renderers and compare their outputs.
        #[arg(long)]
        bench: bool,
    },
    /// Detect, fuse and evaluate the integrals.
    FuseEval(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration document (TOML); defaults apply to missing keys. `integrate`
    /// and `fuse-eval` default to the `config.toml` written by `simulate`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Exit with status 3 if any check fails.
    #[arg(long)]
    check: bool,
    /// Override a configuration key, e.g. `--set flight.v_f=6`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    /// The run configuration; stages that consume simulated files default to
    /// the one `simulate` saved next to them.
    fn config(&self, reuse_saved: bool) -> aos_core::Result<RunConfig> {
        let saved = self.out.join("config.toml");
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None if reuse_saved && saved.is_file() => RunConfig::load(&saved)?,
            None => RunConfig::default(),
        };
        for assignment in &self.overrides {
            config = config.with_override(assignment)?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

fn run(command: &Command) -> aos_core::Result<(StageOutcome, bool)> {
    let (common, bench) = match command {
        Command::Plan(c) | Command::Occlusion(c) | Command::Simulate(c) | Command::FuseEval(c) => (c, false),
        Command::Integrate { common, bench } => (common, *bench),
    };
    let config = common.config(matches!(command, Command::Integrate { .. } | Command::FuseEval(_)))?;
    std::fs::create_dir_all(&common.out)?;
    let out = common.out.as_path();
    let outcome = match command {
        Command::Plan(_) => stages::run_plan(&config, out)?,
        Command::Occlusion(_) => stages::run_occlusion(&config, out)?,
        Command::Simulate(_) => stages::run_simulate(&config, out)?,
        Command::Integrate { .. } => stages::run_integrate(&config, out, bench)?,
        Command::FuseEval(_) => stages::run_fuse_eval(&config, out)?,
    };
    Ok((outcome, common.check))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli.command) {
        Ok((outcome, check)) => {
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            for c in &outcome.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if check && !outcome.all_passed() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
