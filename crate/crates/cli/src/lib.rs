//! Command-line front end for `clockprobe`: strict TOML configuration,
//! figure presets and atomic CSV output.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod presets;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use commands::{execute, Command};
pub use config::RunConfig;
pub use error::CliError;
pub use output::OutputSet;

/// Environment variable overriding the worker-thread count.
pub const WORKERS_ENV: &str = "CLOCKPROBE_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "clockprobe", version, about = "Clock-state birefringence probe simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Phase and light-shift spectra, magic points, two-color balance.
    Spectra(RunArgs),
    /// Master-equation polarimeter signal of microwave Rabi oscillations.
    Rabi(RunArgs),
    /// Rabi frequency versus probe detuning; magic detuning versus angle.
    Chevron(RunArgs),
    /// Decay time and measurement strength versus probe detuning.
    Measurement(RunArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in configuration: fig1, fig2a, fig2c, fig3, fig4.
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory (overrides [output] directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for ensemble pairing and shot noise (overrides [simulation] seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl CliCommand {
    pub fn split(&self) -> (Command, &RunArgs) {
        match self {
            CliCommand::Spectra(a) => (Command::Spectra, a),
            CliCommand::Rabi(a) => (Command::Rabi, a),
            CliCommand::Chevron(a) => (Command::Chevron, a),
            CliCommand::Measurement(a) => (Command::Measurement, a),
        }
    }
}

pub fn load_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    match (&args.config, &args.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(&path.display().to_string()))?;
            RunConfig::from_toml_str(&text).map_err(|e| e.context(&path.display().to_string()))
        }
        (None, Some(name)) => presets::preset(name),
        _ => Err(CliError::Config("give exactly one of --config and --preset".into())),
    }
}

/// Sizes the global thread pool from the environment, if set.
pub fn configure_workers() -> Result<(), CliError> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("{WORKERS_ENV} must be a positive integer, got \"{v}\"")))?;
    // A pool that is already built (e.g. by an earlier call) is left as is.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Loads the configuration, runs the command and commits its outputs.
pub fn run(command: &CliCommand) -> Result<Vec<PathBuf>, CliError> {
    let (cmd, args) = command.split();
    let cfg = load_config(args)?;
    let seed = args.seed.unwrap_or(cfg.simulation.seed);
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output.directory.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set [output] directory".into()))?;
    for w in cfg.cloud.warnings() {
        eprintln!("warning: {w}");
    }
    let outputs = execute(cmd, &cfg, seed)?;
    outputs.commit(Path::new(&dir))
}
