//! Dense tensors with an eager reverse-mode computation record.
//!
//! All arithmetic is `f64`. Model-level logarithms go through
//! [`Tape::clamped_log`] with [`LOG_FLOOR`].

mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport, REL_ERROR_FLOOR};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Op, Tape, Var};
pub use tensor::{canonical_sum, Tensor};

pub(crate) use tape::logsumexp;

/// Floor applied before every model-level logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got {got}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    Size { shape: Vec<usize>, len: usize },
    #[error("log of non-positive value {value}")]
    LogDomain { value: f64 },
    #[error("sqrt of negative value {value}")]
    SqrtDomain { value: f64 },
    #[error("{op}: non-finite result from finite inputs")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("record is not topologically ordered: node {node} consumes node {input}")]
    Cycle { node: usize, input: usize },
    #[error("objective evaluated to non-finite value {value}")]
    NonFiniteObjective { value: f64 },
    #[error("{0}")]
    InvalidArgument(String),
}
