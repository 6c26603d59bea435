//! `milc`: generate bag datasets, run seed sweeps and evaluate checkpoints.
//!
//! Exit codes: 2 for configuration errors (including dimension mismatches),
//! 3 for I/O and data-file errors, 4 when every seed of a sweep fails.

mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use milc_core::{Error, Pooling};

pub use commands::{eval, generate, train};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("{0}")]
    AllRunsFailed(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::AllRunsFailed(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_)
            | Error::Dimension(_)
            | Error::Parameter(_)
            | Error::UndefinedMetric(_) => CliError::Config(msg),
            Error::Io { .. } | Error::Format { .. } | Error::Data(_) | Error::EmptyBag(_) => {
                CliError::Io(msg)
            }
            Error::AllRunsFailed(_) => CliError::AllRunsFailed(msg),
            _ => CliError::Other(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "milc",
    version,
    about = "Multiple-instance learning with certainty pooling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train/validation/test BagPacks.
    Generate(GenerateArgs),
    /// Train every configured seed and pooling, write reports and checkpoints.
    Train(TrainArgs),
    /// Score a BagPack with a checkpoint.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Configuration file with a `data` section.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named dataset: mnist-1pct, mnist-easy or features.
    #[arg(long, required_unless_present = "config")]
    pub preset: Option<String>,
    /// Number of training bags of a preset.
    #[arg(long, requires = "preset")]
    pub n_train: Option<usize>,
    /// Directory holding the MNIST IDX files used by presets.
    #[arg(long, env = "MILC_MNIST_DIR", default_value = "data/mnist")]
    pub mnist_dir: PathBuf,
    /// Generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Train this single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated poolings, or `all`.
    #[arg(long, value_parser = parse_poolings)]
    pub pooling: Option<PoolingList>,
    #[arg(long)]
    pub mc_passes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bagpack: PathBuf,
    /// Split recorded for the BagPack.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value = "max")]
    pub pooling: Pooling,
    #[arg(long, default_value_t = milc_core::pooling::DEFAULT_MC_PASSES)]
    pub mc_passes: usize,
    /// Seed of the Monte-Carlo dropout masks.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Instances listed per bag in rankings.csv.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Poolings named by one `--pooling` argument.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolingList(pub Vec<Pooling>);

fn parse_poolings(s: &str) -> Result<PoolingList, String> {
    if s == "all" {
        return Ok(PoolingList(Pooling::ALL.to_vec()));
    }
    s.split(',')
        .map(|p| p.trim().parse::<Pooling>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()
        .map(PoolingList)
}

/// Initialises logging from `MILC_LOG` (default `info`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("MILC_LOG", "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

pub fn run(cli: Cli) -> Result<PathBuf, CliError> {
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
    }
}
