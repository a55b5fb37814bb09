//! Command-line driver for the `cauchygain` toolkit.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cauchygain::decrease::GainMode;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "CAUCHYGAIN_OUT_DIR";

/// Exit code for a check that ran and failed.
pub const EXIT_CHECK_FAILED: u8 = 2;
/// Exit code for errors (bad config, I/O, numerical failures).
pub const EXIT_ERROR: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "cauchygain", version, about = "Small-gain convergence certificates for delayed feedback cascades")]
pub struct Cli {
    /// Overrides the seed from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Global,
    Relative,
}

impl From<ModeArg> for GainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Global => GainMode::Global,
            ModeArg::Relative => GainMode::Relative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    K,
    Mu,
    TauN,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Builds the small-gain certificate and writes it as JSON.
    Certify(CertifyArgs),
    /// Integrates the cascade and writes trajectory and summary CSVs.
    Simulate(SimulateArgs),
    /// Tabulates certificate verdicts over a range of one parameter.
    Sweep(SweepArgs),
    /// Checks that the distance to the equilibrium set decreases along the
    /// flow of one ODE stage.
    CheckDecrease(StageArgs),
    /// Prints the linear gain and equilibrium set of one ODE stage.
    Gain(StageArgs),
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "global")]
    pub mode: ModeArg,
    /// Output file (default: certificate.json in the output directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also validate the certificate by simulating `[validation] runs`
    /// closed-loop members.
    #[arg(long)]
    pub validate: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub config: PathBuf,
    /// Simulate the closed loop (default).
    #[arg(long, conflicts_with = "open")]
    pub closed: bool,
    /// Simulate the open cascade driven by `[input]`.
    #[arg(long)]
    pub open: bool,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    #[arg(long, allow_negative_numbers = true)]
    pub from: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub to: f64,
    #[arg(long)]
    pub steps: usize,
    /// Output file (default: sweep.csv in the output directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Add the spread of simulated closed-loop limits to every row.
    #[arg(long)]
    pub simulate: bool,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    pub config: PathBuf,
    /// ODE stage, counted from 1 among the ODE stages.
    #[arg(long)]
    pub stage: usize,
    /// Input interval `c d`.
    #[arg(long, num_args = 2, value_names = ["C", "D"])]
    pub input_interval: Vec<f64>,
    /// Target interval `lo hi` of the distance function (default: the
    /// equilibrium set of the input interval).
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub target: Option<Vec<f64>>,
}
