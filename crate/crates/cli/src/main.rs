//! `regdgcnn`: drag-coefficient surrogate pipeline from STL files to
//! trained checkpoints, metrics and learning curves.
//!
//! Machine-readable output (CSV or JSON) goes to stdout or `--out`; logs go
//! to stderr. Exit codes: 0 success, 1 domain failure, 2 usage error.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use regdgcnn_core::model::Aggregation;

#[derive(Debug, Parser)]
#[command(name = "regdgcnn", version, about = "Point-cloud drag-coefficient surrogate")]
pub struct Cli {
    /// TOML experiment file with [model], [train] and [paths] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Single-threaded execution for bitwise-reproducible results.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads for per-design parallel work (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check STL meshes for watertightness; prints JSON reports.
    Validate(ValidateArgs),
    /// Sample, normalise and cache a point cloud per design.
    Sample(SampleArgs),
    /// Mean pairwise Chamfer distance over cached clouds.
    Diversity(DiversityArgs),
    /// Seeded 70/15/15 train/validation/test split of the manifest.
    Split(SplitArgs),
    /// Train a model; writes checkpoints, history and metrics.
    Train(TrainArgs),
    /// Metrics of a checkpoint on cached designs.
    Eval(EvalArgs),
    /// Drag predictions for STL files.
    Predict(PredictArgs),
    /// Test error versus training-set size on nested subsets.
    ScalingStudy(ScalingArgs),
    /// Parameter counts and configuration as JSON.
    Info(InfoArgs),
    /// Write a synthetic dataset (STL files plus manifest) for demos.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Write machine-readable output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Coefficient CSV (design_id, cd, cl, cl_f, cl_r, cm).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory of cached point clouds.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Map an external manifest header to a canonical column: `EXTERNAL=cd`.
    #[arg(long = "alias", value_name = "EXTERNAL=COLUMN", value_parser = manifest::parse_alias)]
    pub aliases: Vec<(String, String)>,
    /// Points per cached cloud.
    #[arg(long)]
    pub points: Option<usize>,
    /// Seed the caches were sampled with.
    #[arg(long)]
    pub sample_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// A single STL file.
    #[arg(long, conflicts_with = "stl_dir", required_unless_present = "stl_dir")]
    pub stl: Option<PathBuf>,
    /// Every *.stl file in a directory.
    #[arg(long)]
    pub stl_dir: Option<PathBuf>,
    /// Vertex-merge grid resolution.
    #[arg(long, default_value_t = regdgcnn_core::mesh::DEFAULT_MERGE_EPSILON)]
    pub merge_epsilon: f64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub stl_dir: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Restrict to designs listed in this manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long = "alias", value_name = "EXTERNAL=COLUMN", value_parser = manifest::parse_alias)]
    pub aliases: Vec<(String, String)>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Re-sample designs whose cache file already exists.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct DiversityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Points kept per cloud before the pairwise pass.
    #[arg(long, default_value_t = regdgcnn_core::pointcloud::DEFAULT_DIVERSITY_SUBSAMPLE)]
    pub subsample: usize,
    /// Use every cached point.
    #[arg(long)]
    pub no_subsample: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Also require `<design_id>.stl` in this directory.
    #[arg(long)]
    pub stl_dir: Option<PathBuf>,
    #[arg(long = "alias", value_name = "EXTERNAL=COLUMN", value_parser = manifest::parse_alias)]
    pub aliases: Vec<(String, String)>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    ConcatAll,
    LastLayer,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::ConcatAll => Aggregation::ConcatAll,
            AggregationArg::LastLayer => Aggregation::LastLayer,
        }
    }
}

/// Model and optimiser overrides on top of the config file.
#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated EdgeConv widths.
    #[arg(long, value_delimiter = ',')]
    pub edgeconv_channels: Option<Vec<usize>>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Comma-separated fully connected widths.
    #[arg(long, value_delimiter = ',')]
    pub fc_channels: Option<Vec<usize>>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub no_batch_norm: bool,
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub factor: Option<f64>,
    /// Seed for initialisation, shuffling, dropout and the split.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use this fraction of the training split.
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Split CSV from `split`; computed from the seed when absent.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Directory for checkpoints, history and metrics.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Continue from `last.ckpt` in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Report one row per split of this CSV instead of one over all designs.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// STL files to predict.
    #[arg(long, num_args = 1.., required_unless_present = "stl_dir")]
    pub stl: Vec<PathBuf>,
    /// Every *.stl file in a directory.
    #[arg(long)]
    pub stl_dir: Option<PathBuf>,
    #[arg(long)]
    pub sample_seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0")]
    pub fractions: Vec<f64>,
    /// Also write the training subset of every fraction as CSV.
    #[arg(long)]
    pub subsets: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    /// Describe a checkpoint instead of the configured model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Receives `stl/` and `manifest.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
