use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use scoreq_core::eval::Correlation;
use scoreq_core::model::Layer;
use scoreq_core::training::LossMode;

#[derive(Parser, Debug)]
#[command(name = "scoreq", version, about = "Triplet-loss quality regression: data, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic degradation corpus (manifest, features, references).
    GenData(GenDataArgs),
    /// Train a model into a run directory.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest in NR or NMR mode.
    Eval(EvalArgs),
    /// Paired bootstrap comparison of two prediction files.
    Bootstrap(BootstrapArgs),
    /// PCA, k-means and NMI diagnostics of a checkpoint's embeddings.
    Diagnose(DiagnoseArgs),
    /// Time one training step for the L2 and triplet objectives.
    Bench(BenchArgs),
    /// Held-out-family comparison of SCOREQ, L2 and offline triplets.
    Protocol(ProtocolArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML file with the command's settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file or directory (command specific).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

fn parse_loss(s: &str) -> Result<LossMode, String> {
    s.parse().map_err(|e: scoreq_core::Error| e.to_string())
}

fn parse_layer(s: &str) -> Result<Layer, String> {
    s.parse().map_err(|e: scoreq_core::Error| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Nr,
    Nmr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum CorrelationArg {
    Pearson,
    Spearman,
}

impl From<CorrelationArg> for Correlation {
    fn from(c: CorrelationArg) -> Self {
        match c {
            CorrelationArg::Pearson => Correlation::Pearson,
            CorrelationArg::Spearman => Correlation::Spearman,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub families: Option<usize>,
    #[arg(long)]
    pub samples_per_family: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub input_dim: Option<usize>,
    /// Families routed entirely to the test split (comma separated tags).
    #[arg(long, value_delimiter = ',')]
    pub holdout: Option<Vec<String>>,
    #[arg(long)]
    pub mos_noise_sd: Option<f64>,
    #[arg(long)]
    pub references: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Reference manifest; defaults to refs/manifest.csv next to the manifest.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// l2, scoreq_fixed, scoreq_adaptive or offline_triplet.
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossMode>,
    /// After a triplet run, train the linear MOS head on the frozen encoder.
    #[arg(long)]
    pub nr: bool,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_encoder: Option<f64>,
    #[arg(long)]
    pub lr_head: Option<f64>,
    /// Epoch limit of every stage, including the `--nr` head.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<EvalMode>,
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Layer for NMR distances: projection or encoder.
    #[arg(long, value_parser = parse_layer)]
    pub layer: Option<Layer>,
    /// Splits to score (comma separated); default every non-empty split.
    #[arg(long, value_delimiter = ',')]
    pub splits: Option<Vec<String>>,
    /// Also write per-sample scores as `id,score` CSV (input for `bootstrap`).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub common: Common,
    /// CSV with header: an `id` column and a `mos` column (a data manifest works).
    #[arg(long)]
    pub mos: Option<PathBuf>,
    /// CSV with header: `id` and `score` columns, as written by `eval --predictions`.
    #[arg(long)]
    pub pred_a: Option<PathBuf>,
    #[arg(long)]
    pub pred_b: Option<PathBuf>,
    #[arg(long)]
    pub name_a: Option<String>,
    #[arg(long)]
    pub name_b: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub confidence: Option<f64>,
    #[arg(long, value_enum)]
    pub correlation: Option<CorrelationArg>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub refs: Option<PathBuf>,
    #[arg(long, value_parser = parse_layer)]
    pub layer: Option<Layer>,
    /// Splits to embed (comma separated); default test.
    #[arg(long, value_delimiter = ',')]
    pub splits: Option<Vec<String>>,
    /// Number of k-means clusters; default the number of families present.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',')]
    pub batch_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossMode>,
}

#[derive(Args, Debug)]
pub struct ProtocolArgs {
    #[command(flatten)]
    pub common: Common,
    /// Families to hold out (comma separated); default all.
    #[arg(long, value_delimiter = ',')]
    pub folds: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub bootstrap_iterations: Option<usize>,
    /// Skip the offline-triplet baseline.
    #[arg(long)]
    pub no_offline: bool,
}
