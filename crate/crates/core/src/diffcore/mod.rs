//! Dense tensors and a static reverse-mode differentiation graph.
//!
//! The graph holds parameters and constants by value and recomputes every
//! other node from named inputs on [`Graph::evaluate`]. Reverse passes fill
//! gradients for all nodes that depend on a parameter.

mod gemm;
mod gradcheck;
mod graph;
mod tensor;

pub use gemm::gemm;
pub use gradcheck::{check_gradients, GradCheckReport, ParamCheck};
pub use graph::{Graph, NodeId, RowError, RowFunction};
pub(crate) use graph::softplus;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("non-finite value at node {node} ({op}){}", row.map(|r| format!(", row {r}")).unwrap_or_default())]
    NonFinite {
        node: usize,
        op: &'static str,
        row: Option<usize>,
    },
    #[error("{name} failed at node {node}, row {row}: {message}")]
    Row {
        node: usize,
        name: String,
        row: usize,
        message: String,
    },
    #[error("missing graph input `{0}`")]
    MissingInput(String),
    #[error("backward root node {node} is not scalar (shape {shape:?})")]
    NonScalarRoot { node: usize, shape: Vec<usize> },
    #[error("graph must be evaluated before backward")]
    NotEvaluated,
    #[error("{0}")]
    Usage(String),
}
