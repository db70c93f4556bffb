//! Tape-based reverse-mode differentiation over the closed operator set of
//! the drag-regression network.
//!
//! Forward ops append a node to a [`Tape`] and return a [`Var`] handle;
//! [`Tape::backward`] walks the tape in exact reverse order and accumulates
//! gradients additively. Conventions at non-differentiable points:
//! LeakyReLU uses the negative-side slope at exactly zero, and max pooling
//! routes the gradient to the first maximal slot.

mod edge_conv;
mod ops;
mod tape;
mod tensor;

use thiserror::Error;

pub use edge_conv::EdgeConvSpec;
pub use tape::{Gradients, RunningStats, Tape, Var, BN_EPS, BN_MOMENTUM};
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch, {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("batch_norm: training needs more than one value per channel")]
    BatchTooSmall,
    #[error("neighbour graph does not match the features: {0}")]
    GraphSizeMismatch(String),
    #[error("{op}: invalid argument, {detail}")]
    InvalidArgument { op: &'static str, detail: String },
}

/// Whether batch statistics and dropout are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}
