//! Doubly-stochastic relaxation (Sinkhorn) and exact discretization (Hungarian).

mod hungarian;
mod permutation;
mod sinkhorn;

pub use hungarian::{assignment_score, hungarian};
pub use permutation::Permutation;
pub use sinkhorn::{
    marginal_deviation, sinkhorn, sinkhorn_tape, SimilarityMatrix, SinkhornConfig, SinkhornStats, Stage,
};
