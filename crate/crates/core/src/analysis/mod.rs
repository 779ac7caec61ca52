//! Posterior characterization from flow samples.
//!
//! Sample moments, the exact linear-Gaussian posterior used as an oracle,
//! KL estimates against known densities, alignment of shift-ambiguous image
//! samples, and mode clustering on principal components.

mod align;
mod cluster;
mod gaussian;
mod kl;
mod stats;

pub use align::{align_normalize, AlignReference};
pub use cluster::{cluster_modes, cluster_modes_scored, kmeans, pca_embed, Histogram, KMeans, Mode, ModeReport, PcaEmbedding};
pub use gaussian::{analytic_posterior, gaussian_kl, AnalyticPosterior};
pub use kl::{grid_log_partition, kl_from_log_densities, kl_monte_carlo, GridBox, KlEstimate};
pub use stats::{coverage_fraction, sample_stats, PosteriorSampleSet, SampleStats};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("integration box too small: boundary density {boundary:e} vs peak {peak:e}")]
    BoxTooSmall { boundary: f64, peak: f64 },
    #[error("sample {0} has zero total flux")]
    ZeroFlux(usize),
    #[error("{0}")]
    Domain(String),
    #[error("matrix is not positive definite: {0}")]
    Singular(String),
    #[error("{0}")]
    Usage(String),
    #[error("flow evaluation failed: {0}")]
    Flow(String),
}
