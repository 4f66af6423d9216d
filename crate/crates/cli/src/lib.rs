//! Command-line front end for the FedPD simulator.
//!
//! The binary is a thin wrapper around [`execute`]; everything that touches the
//! filesystem or prints results lives here so it can be driven from tests.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod gendata;
mod run;
mod theory;

pub use gendata::{gendata, GendataArgs};
pub use run::{run_experiment, sweep, RunArgs, RunSummary, SweepArgs};
pub use theory::{theory, TheoryArgs};

/// Failure of a subcommand, carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable or invalid configuration or arguments.
    #[error("{0}")]
    Config(String),
    /// Output could not be written.
    #[error("{0}")]
    Io(String),
    /// A theory check ran and reported FAIL.
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 1,
            CliError::CheckFailed(_) => 3,
        }
    }

    pub(crate) fn io(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }
}

impl From<fedpd_core::Error> for CliError {
    fn from(err: fedpd_core::Error) -> Self {
        match err {
            fedpd_core::Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fedpd-lab",
    version,
    about = "Federated primal-dual optimization experiments"
)]
pub struct Cli {
    /// Worker threads for agent-parallel work (default: all cores).
    #[arg(long, global = true, env = "FEDPD_LAB_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write trace.csv and summary.json.
    Run(RunArgs),
    /// Run one experiment per value of a single parameter.
    Sweep(SweepArgs),
    /// Run a numerical theory check and print PASS or FAIL.
    Theory(TheoryArgs),
    /// Generate a synthetic dataset as CSV.
    Gendata(GendataArgs),
}

/// Options shared by `run` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,

    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Overrides the run seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Runs `cli` on a dedicated thread pool, writing human-readable output to `out`.
pub fn execute(cli: Cli, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Run(args) => run_experiment(&args, out).map(|_| ()),
        Command::Sweep(args) => sweep(&args, out),
        Command::Theory(args) => theory(&args, out),
        Command::Gendata(args) => gendata(&args, out),
    })
}

pub(crate) fn emit(
    out: &mut (dyn Write + Send),
    line: impl std::fmt::Display,
) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError::io("stdout", e))
}
