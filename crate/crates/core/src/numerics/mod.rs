//! Dense tensors, a define-then-run graph with reverse-mode gradients,
//! Adam and Kaiming initialization.

mod adam;
mod eval;
mod gradcheck;
mod graph;
mod init;
pub(crate) mod kernels;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use eval::{eval_backward, eval_forward, Backward, Evaluation, Gradients};
pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP, DENOMINATOR_FLOOR};
pub use graph::{Bindings, Graph, Node, NodeId, OpKind, TensorSource};
pub use init::{kaiming_init, kaiming_std, kaiming_with};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch at node {node} ({op}): expected {expected}, got {actual:?}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        expected: String,
        actual: Vec<Vec<usize>>,
    },
    #[error("no tensor bound for `{0}`")]
    UnboundInput(String),
    #[error("backward requires a single-element output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("{len} values do not fill shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
}
