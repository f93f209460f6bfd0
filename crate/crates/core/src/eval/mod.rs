//! Correlation metrics, mapped RMSE, the paired bootstrap comparison and
//! embedding diagnostics (PCA, k-means, NMI).

mod bootstrap;
mod cluster;
mod diagnostics;
mod pca;
mod stats;

pub use bootstrap::{bootstrap_compare, BootstrapConfig, BootstrapReport, Correlation};
pub use cluster::{kmeans, nmi, KMeansConfig, KMeansResult};
pub use diagnostics::{diagnose_embeddings, DiagnosticsReport, PointRow};
pub use pca::{pca2, Pca2};
pub use stats::{
    average_ranks, eval_report, metrics_report, pearson, rmse_mapped, spearman, EvalReport, MappedRmse,
    Mapping, MetricsReport, ScoreKind,
};
