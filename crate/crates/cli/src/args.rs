use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Train, evaluate and compare parallel-backbone fusion classifiers.
#[derive(Debug, Parser)]
#[command(name = "fusenet", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partition a manifest into train/validation/test index sets.
    Split(SplitArgs),
    /// Train a model and keep the best-validation checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one section of a split.
    Eval(EvalArgs),
    /// Merge metric rows into comparison and chart-data files.
    Report(ReportArgs),
    /// Run the double-precision finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Write the seeded two-class synthetic image set and its manifest.
    Synth(SynthArgs),
}

/// Flags shared by commands that resolve a run configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV manifest with a `path,label` header.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Keep the class ratio in every part.
    #[arg(long)]
    pub stratified: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Split plan JSON written by `split`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Output classes of the head (labels use indices 0 and 1).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Feature width of every backbone.
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Comma-separated subset of residual, inception, shuffle, in concatenation order.
    #[arg(long, value_delimiter = ',')]
    pub backbones: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Section {
    Train,
    Val,
    Test,
}

impl Section {
    pub fn name(self) -> &'static str {
        match self {
            Section::Train => "train",
            Section::Val => "val",
            Section::Test => "test",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub section: Section,
    /// Model label in the metrics row; defaults to the backbone kind or "fusion".
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metric CSV files sharing the report header.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of random seeds per op, starting at --seed.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the per-check results as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Add a check with a deliberately wrong backward pass.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 600)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
