mod aggregate;
mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Hierarchy-aware representation learning experiments.
#[derive(Debug, Parser)]
#[command(name = "hierlearn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write hierarchical distance, transformed distance and similarity matrices.
    Distances(DistancesArgs),
    /// Place one fixed unit proxy per class by stress minimization.
    Mds(MdsArgs),
    /// Train an embedder with a classification head.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a metrics report.
    Eval(EvalArgs),
    /// Generate a synthetic hierarchical dataset.
    Synth(SynthArgs),
    /// Summarize reports across seeds with 95% confidence intervals.
    Aggregate(AggregateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DistancesArgs {
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MdsArgs {
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = hierlearn::proxy::DEFAULT_MDS_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = hierlearn::proxy::DEFAULT_MDS_ITERS)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Softmax,
    Normface,
    Proxydr,
    Corr,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Comma-separated subset of ema, dynamic, mds ("standard" for none).
    #[arg(long, default_value = "standard")]
    pub options: String,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 10.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub embed_dim: usize,
    /// Hidden width of a one-hidden-layer embedder (linear when omitted).
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = hierlearn::proxy::DEFAULT_EMA_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Seed of the stratified 70/10/20 split (kept apart from the run seed).
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// File of class ids (one per line) for the living-only correlations.
    #[arg(long)]
    pub living_classes: Option<PathBuf>,
    /// Part of the checkpoint's split to evaluate.
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub branching: usize,
    #[arg(long)]
    pub depth: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-level diffusion scales, comma-separated (default halves from 2.0).
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    /// Within-class noise scale.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AggregateArgs {
    /// Glob pattern matching report JSON files.
    #[arg(long)]
    pub reports: String,
    /// Summary JSON path; a CSV with the same stem is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let result = match cli.command {
        Command::Distances(a) => commands::distances(&a, &argv),
        Command::Mds(a) => commands::mds(&a, &argv),
        Command::Train(a) => commands::train(&a, &argv),
        Command::Eval(a) => commands::eval(&a, &argv),
        Command::Synth(a) => commands::synth(&a, &argv),
        Command::Aggregate(a) => commands::aggregate(&a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
