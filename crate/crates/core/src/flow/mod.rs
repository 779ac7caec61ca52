//! Real-NVP generator: affine coupling layers with fixed random
//! permutations, an optional softplus output map, exact inverse and exact
//! log-determinant.

mod checkpoint;
mod conditioner;
mod model;

pub use checkpoint::{load_checkpoint, manifest_text, model_from_parts, save_checkpoint, weights_blob};
pub use conditioner::{AffineNorm, Conditioner, Dense, HIDDEN_LAYERS, LEAKY_SLOPE};
pub use model::{
    standard_normal_log_density, CouplingLayer, Direction, FlowConfig, FlowGraph, FlowModel,
    LatentBatch, OutputMap, Permutation,
};
pub(crate) use model::draw_normal;

use thiserror::Error;

use crate::diffcore::GraphError;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),
    #[error("expected dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite values after layer {layer} ({stage})")]
    NonFinite { layer: usize, stage: &'static str },
    #[error("input outside the model range: {0}")]
    Domain(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
}
