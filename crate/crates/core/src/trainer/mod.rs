//! Variational objective and its stochastic optimization.
//!
//! The loss for a latent batch `z_1..z_N` is the batch mean of
//! `L(y, f(G(z_k))) + R(G(z_k)) − β·log|det ∂G/∂z_k|`. The base density term is
//! constant in the flow weights and left out. Optimization is plain Adam on a
//! fresh standard normal batch per step.

mod adam;
mod objective;
mod train;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use objective::{dpi_objective, toy_objective, Likelihood, LossBreakdown, Objective, ObjectiveGraph};
pub use train::{train, train_with, BetaAnneal, TrainAbort, TrainConfig, TrainOutcome};

use thiserror::Error;

use crate::diffcore::GraphError;
use crate::flow::FlowError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss{}: {detail}", sample.map(|s| format!(" at sample {s}")).unwrap_or_default())]
    NonFinite { sample: Option<usize>, detail: String },
    #[error("likelihood expects dimension {expected}, flow has {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Graph(GraphError),
    #[error("checkpoint callback failed: {0}")]
    Checkpoint(String),
}

impl From<GraphError> for TrainError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::NonFinite { row, node, op } => TrainError::NonFinite {
                sample: row,
                detail: format!("node {node} ({op})"),
            },
            GraphError::Row { row, name, message, .. } => TrainError::NonFinite {
                sample: Some(row),
                detail: format!("{name}: {message}"),
            },
            other => TrainError::Graph(other),
        }
    }
}
