use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;
use ncdr_cli::config::DesignMode;
use ncdr_cli::{execute, CliResult, Command, ExperimentConfig};

/// Delayed-resonator vibration absorption: analysis, tuning, stability,
/// simulation and structural design. Log verbosity follows `RUST_LOG`.
#[derive(Parser)]
#[command(name = "ncdr", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Phasor report: required force, link energies, power, tuning, abscissa.
    Analyze(Common),
    /// Resonator gain and delay candidates.
    Tune(Common),
    /// Rightmost closed-loop roots as CSV.
    Spectrum(Common),
    /// Time-domain run with the configured switch protocol.
    Simulate(Common),
    /// Grid or multi-start design optimization.
    Optimize(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replaces the seed of a continuous design run.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path assignment such as `design.mode.starts=10`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run(command: Command, args: Common) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(&args.config, &args.overrides)?;
    if let Some(seed) = args.seed {
        match cfg.design.as_mut().map(|d| &mut d.mode) {
            Some(DesignMode::Continuous { seed: s, .. }) => *s = seed,
            _ => warn!("--seed ignored: no continuous design section"),
        }
    }
    execute(command, &cfg, &args.out)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Analyze(a) => (Command::Analyze, a),
        Sub::Tune(a) => (Command::Tune, a),
        Sub::Spectrum(a) => (Command::Spectrum, a),
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::Optimize(a) => (Command::Optimize, a),
    };
    match run(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
