//! `dpi` command-line runner: simulation, training, sampling and posterior
//! analysis driven by a JSON config.

pub mod commands;
pub mod config;
pub mod io;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) | CliError::Other(_) => 1,
        }
    }
}

pub(crate) fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "dpi", version, about = "Flow-based posterior imaging experiments")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a truth image and synthetic measurements.
    Simulate,
    /// Train a flow on the configured problem.
    Train,
    /// Draw samples and their log densities from a trained flow.
    Sample,
    /// Posterior statistics, alignment, modes, embedding and coverage.
    Stats {
        /// Only report the reduced χ² of this image against the data.
        #[arg(long, value_name = "IMAGE")]
        chi2: Option<PathBuf>,
    },
    /// Compare against the analytic posterior (Gaussian problems) or the
    /// quadrature-normalized target (toy).
    Oracle,
    /// Train the toy problem over the configured β grid and tabulate KL.
    ToySweep,
    /// Masked MRI simulation, training and coverage per acceleration.
    Mri,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Stats { .. } => "stats",
            Command::Oracle => "oracle",
            Command::ToySweep => "toy-sweep",
            Command::Mri => "mri",
        }
    }
}

/// Parses `argv` (program name first) and runs the command, returning the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dpi: {e}");
            e.exit_code()
        }
    }
}

pub fn run_cli(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Usage("--config <FILE> is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    commands::execute(&cli.command, cfg)
}
