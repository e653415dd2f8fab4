//! Command-line driver: runs, sweeps, level-set diagnostics, bound
//! certificates and long-time reports from a TOML config.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::Options;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Blowup(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("internal error: {0}")]
    Internal(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Blowup(_) => 3,
            CliError::Precondition(_) => 4,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<kslab_core::Error> for CliError {
    fn from(e: kslab_core::Error) -> Self {
        use kslab_core::Error as E;
        match e {
            E::InvalidGrid(_) | E::InvalidArgument(_) | E::UnknownPreset(_) | E::NonSolenoidal { .. } => {
                CliError::Config(e.to_string())
            }
            E::Precondition(m) => CliError::Precondition(m),
            E::WrongRegime(_) | E::NoKf(_) | E::GridMismatch => CliError::Precondition(e.to_string()),
            E::StepFailed { .. } | E::Format(_) | E::Io(_) => CliError::Internal(anyhow::anyhow!(e)),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kslab", version, about = "Chemotaxis simulations, level-set diagnostics and bound certificates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `outputs.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Concurrent scenarios for `sweep` and `certify`.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
    /// Seed for randomized initial data; overrides `initial.seed`.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Suppress the summary line.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write the series, snapshots and manifest.
    Run,
    /// Run the cartesian product of the `[[sweep.axis]]` values.
    Sweep,
    /// Level ladder, `Y_j` and Caccioppoli report for a run.
    Diagnose {
        /// Output directory of an earlier `run`; otherwise the config is run.
        #[arg(long, value_name = "DIR")]
        trajectory: Option<PathBuf>,
    },
    /// Calibrate the sup-bound constant on the sweep scenarios and check a
    /// seeded holdout split.
    Certify {
        /// Fraction of scenarios held out; overrides `diagnostics.holdout_fraction`.
        #[arg(long, value_name = "F")]
        holdout: Option<f64>,
    },
    /// Equilibrium, convergence rate, Lyapunov and Hölder report.
    Stability,
    /// Structural hypothesis check of the configured model.
    Check,
}

/// Runs the parsed command and returns the summary line.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let loaded = cli.config.as_deref().map(config::load).transpose()?;
    let opts = Options { out: cli.out.clone(), jobs: cli.jobs, seed: cli.seed };
    let loaded = loaded.as_ref();
    match &cli.command {
        Command::Run => commands::cmd_run(loaded, &opts),
        Command::Sweep => commands::cmd_sweep(loaded, &opts),
        Command::Diagnose { trajectory } => commands::cmd_diagnose(loaded, &opts, trajectory.as_deref()),
        Command::Certify { holdout } => commands::cmd_certify(loaded, &opts, *holdout),
        Command::Stability => commands::cmd_stability(loaded, &opts),
        Command::Check => commands::cmd_check(loaded, &opts),
    }
}
