//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Graph`] as they execute. [`Graph::backward`]
//! walks the tape once in reverse and returns gradients for every leaf
//! created with `requires_grad`.
//!
//! Shape rules:
//!
//! - `matmul`: `[.., m, k] x [.., k, n] -> [.., m, n]`. Batch axes must match,
//!   or one side must be a plain matrix that is shared across the other's
//!   batch axes.
//! - `add`, `sub`, `elementwise_mul`: the right operand broadcasts into the
//!   left one (right-aligned; each right axis equals the left axis or is 1).
//!   The output always has the left operand's shape.
//! - `softmax_last_dim`, `layer_norm`, `mean_last_dim`: act on rows of the
//!   last axis. `mean_last_dim` drops that axis.
//! - `concat(axis)` / `split(axis, sizes)`: every other axis must agree.
//! - `embedding_lookup`: `[rows, dim]` table, ids of shape `S` -> `S + [dim]`.
//! - `transpose_last_two`: swaps the two trailing axes (rank >= 2).
//! - `reshape`: any shape with the same element count.
//! - Unary activations, `scalar_mul`, `dropout`, `sigmoid`: shape preserving.
//! - `sum_all`, `mean_all`, `bce_with_logits`: reduce to a scalar.

mod gradcheck;
mod graph;
mod tensor;

use thiserror::Error;

pub use gradcheck::{central_difference, grad_check, grad_check_many};
pub use graph::{Gradients, Graph, Op, OpKind, Var, SELU_ALPHA, SELU_SCALE};
pub(crate) use graph::sigmoid;
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: OpKind,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("unknown op kind `{0}`")]
    UnknownOp(String),
    #[error("{op}: {reason}")]
    InvalidArgument { op: OpKind, reason: String },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: OpKind,
        index: usize,
        bound: usize,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward called on an empty graph")]
    EmptyGraph,
    #[error("non-finite value: {0}")]
    NonFinite(String),
}
