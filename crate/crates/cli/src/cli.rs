//! Argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "hierflow",
    version,
    about = "Amortized posterior estimation for two-level hierarchical models",
    long_about = None
)]
pub struct Cli {
    /// Worker threads for simulation, training and diagnostics [default: all cores]
    #[arg(long, global = true, value_name = "K")]
    pub threads: Option<usize>,

    /// Run all parallel sections on one thread
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Log filter (error, warn, info, debug, trace)
    #[arg(long, global = true, default_value = "info", value_name = "LEVEL")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate datasets from a model's prior predictive
    Simulate(SimulateArgs),
    /// Train summary and inference networks
    Train(TrainArgs),
    /// Draw posterior samples for a dataset
    Sample(SampleArgs),
    /// Simulation-based calibration and parameter recovery
    Sbc(SbcArgs),
    /// Leave-one-group-out predictive comparison
    Logo(LogoArgs),
    /// Aggregate diagnostic outputs into one report
    Report(ReportArgs),
    /// List built-in models and their parameters
    Models,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON config file (or a previous run.json)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Built-in model id or path to a model spec file
    #[arg(long)]
    pub model: Option<String>,
    /// Number of datasets
    #[arg(long, value_name = "N")]
    pub n: Option<usize>,
    /// Groups per dataset [default: drawn from the model]
    #[arg(long, value_name = "J")]
    pub groups: Option<usize>,
    /// Observations per group [default: drawn from the model]
    #[arg(long, value_name = "N")]
    pub obs: Option<usize>,
    /// Random seed [default: $HIERFLOW_SEED or 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config file (or a previous run.json)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Built-in model id or path to a model spec file
    #[arg(long)]
    pub model: Option<String>,
    /// Number of simulated training datasets
    #[arg(long, value_name = "M")]
    pub budget: Option<usize>,
    /// Passes over the training set
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Datasets per gradient step
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate
    #[arg(long, value_name = "RATE")]
    pub lr: Option<f64>,
    /// Simulate fresh datasets for every step
    #[arg(long)]
    pub online: bool,
    /// Random seed [default: $HIERFLOW_SEED or 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// JSON config file (or a previous run.json)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Checkpoint directory
    #[arg(long, value_name = "DIR")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset file
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Number of joint posterior draws
    #[arg(long, value_name = "S")]
    pub draws: Option<usize>,
    /// Sample even if the dataset lies outside the training range
    #[arg(long)]
    pub allow_out_of_range: bool,
    /// Random seed [default: $HIERFLOW_SEED or 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SbcArgs {
    /// JSON config file (or a previous run.json)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Checkpoint directory
    #[arg(long, value_name = "DIR")]
    pub checkpoint: Option<PathBuf>,
    /// Simulated replications
    #[arg(long, value_name = "N")]
    pub sims: Option<usize>,
    /// Posterior draws per replication
    #[arg(long, value_name = "L")]
    pub draws: Option<usize>,
    /// Simultaneous band level
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Monte-Carlo replicates for the band
    #[arg(long, value_name = "N")]
    pub band_reps: Option<usize>,
    /// Random seed [default: $HIERFLOW_SEED or 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LogoArgs {
    /// JSON config file (or a previous run.json)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Checkpoint directory of model A
    #[arg(long, value_name = "DIR")]
    pub checkpoint: Option<PathBuf>,
    /// Model B: a checkpoint directory, or `oracle` for the analytic posterior [default: model A]
    #[arg(long, value_name = "DIR|oracle")]
    pub compare: Option<String>,
    /// Dataset file
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Posterior draws per left-out group
    #[arg(long, value_name = "S")]
    pub draws: Option<usize>,
    /// Random seed [default: $HIERFLOW_SEED or 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories produced by `sbc` or `logo`
    #[arg(value_name = "DIR", num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}
