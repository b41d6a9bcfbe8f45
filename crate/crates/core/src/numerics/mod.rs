//! Dense tensors and a small taped reverse-mode differentiator.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{
    analytic_gradient, finite_difference_check, finite_difference_check_at, relative_error,
};
pub use tape::{Gradients, NodeId, Primitive, Tape, LAYER_NORM_EPS};
#[allow(unused_imports)]
pub(crate) use tensor::gemm;
pub use tensor::{log_sum_exp, softmax, softmax_into, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
