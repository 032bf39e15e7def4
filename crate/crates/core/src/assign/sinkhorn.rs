//! Sinkhorn normalization in the log domain.
//!
//! Row and column normalization become log-sum-exp subtractions, which is the
//! same fixed-point iteration as dividing by row/column sums but cannot
//! overflow for large score/τ ratios.

use serde::{Deserialize, Serialize};

use crate::diffcore::{canonical_sum, logsumexp, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Raw,
    DoublyStochastic,
}

/// Square non-negative score matrix, held as natural-log scores.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    log_scores: Tensor,
    stage: Stage,
}

impl SimilarityMatrix {
    /// Wraps log-scores. `-inf` entries stand for exact zeros.
    pub fn from_log_scores(log_scores: Tensor) -> Result<Self> {
        check_square(&log_scores)?;
        if log_scores.data().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonPositive("log-scores contain NaN or +inf".into()));
        }
        Ok(SimilarityMatrix {
            log_scores,
            stage: Stage::Raw,
        })
    }

    pub fn from_positive(m: &Tensor) -> Result<Self> {
        check_square(m)?;
        if let Some(&bad) = m.data().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::NonPositive(format!("entry {bad} is negative or non-finite")));
        }
        Self::from_log_scores(m.map(f64::ln))
    }

    pub fn n(&self) -> usize {
        self.log_scores.rows()
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn log_scores(&self) -> &Tensor {
        &self.log_scores
    }

    pub fn to_matrix(&self) -> Tensor {
        self.log_scores.map(f64::exp)
    }
}

fn check_square(t: &Tensor) -> Result<()> {
    if t.rank() != 2 || t.rows() != t.cols() || t.rows() == 0 {
        return Err(Error::Shape(format!(
            "similarity matrix must be square and non-empty, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub max_iters: usize,
    pub tol: f64,
}

impl SinkhornConfig {
    /// Bounded unroll used while training.
    pub const TRAIN: SinkhornConfig = SinkhornConfig {
        max_iters: 20,
        tol: 1e-6,
    };
    /// Longer run used for evaluation.
    pub const EVAL: SinkhornConfig = SinkhornConfig {
        max_iters: 200,
        tol: 1e-6,
    };

    /// Exactly `iters` rounds with no early stop.
    pub fn fixed(iters: usize) -> Self {
        SinkhornConfig {
            max_iters: iters,
            tol: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("sinkhorn max_iters must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("sinkhorn tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig::TRAIN
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornStats {
    pub iterations: usize,
    /// Largest |row or column sum − 1| of the returned matrix.
    pub max_deviation: f64,
    pub converged: bool,
}

fn require_support(log_scores: &Tensor) -> Result<()> {
    let n = log_scores.rows();
    for i in 0..n {
        if log_scores.row(i).iter().all(|&v| v == f64::NEG_INFINITY) {
            return Err(Error::NonPositive(format!("row {i} is all zeros")));
        }
    }
    for j in 0..n {
        if (0..n).all(|i| log_scores.at(i, j) == f64::NEG_INFINITY) {
            return Err(Error::NonPositive(format!("column {j} is all zeros")));
        }
    }
    Ok(())
}

/// Largest |row sum − 1| or |column sum − 1| of `exp(log_s)`, with sums that
/// do not depend on node order.
pub fn marginal_deviation(log_s: &Tensor) -> f64 {
    let n = log_s.rows();
    let s = log_s.map(f64::exp);
    let mut terms = vec![0.0; n];
    let mut dev: f64 = 0.0;
    for i in 0..n {
        terms.copy_from_slice(s.row(i));
        dev = dev.max((canonical_sum(&terms) - 1.0).abs());
    }
    for j in 0..n {
        for (i, t) in terms.iter_mut().enumerate() {
            *t = s.at(i, j);
        }
        dev = dev.max((canonical_sum(&terms) - 1.0).abs());
    }
    dev
}

fn subtract_broadcast(x: &mut Tensor, lse: &Tensor, axis: usize) {
    let n = x.rows();
    let m = x.cols();
    for i in 0..n {
        for j in 0..m {
            let s = if axis == 1 { lse.data()[i] } else { lse.data()[j] };
            let v = x.at(i, j) - s;
            x.set(i, j, v);
        }
    }
}

/// Alternating row/column normalization until every marginal is within `tol`
/// of one, or `max_iters` rounds have run.
pub fn sinkhorn(m: &SimilarityMatrix, cfg: &SinkhornConfig) -> Result<(SimilarityMatrix, SinkhornStats)> {
    cfg.validate()?;
    require_support(&m.log_scores)?;
    let mut l = m.log_scores.clone();
    let mut stats = SinkhornStats {
        iterations: 0,
        max_deviation: f64::INFINITY,
        converged: false,
    };
    for it in 1..=cfg.max_iters {
        let r = logsumexp(&l, 1);
        subtract_broadcast(&mut l, &r, 1);
        let c = logsumexp(&l, 0);
        subtract_broadcast(&mut l, &c, 0);
        stats.iterations = it;
        stats.max_deviation = marginal_deviation(&l);
        if stats.max_deviation < cfg.tol {
            stats.converged = true;
            break;
        }
    }
    Ok((
        SimilarityMatrix {
            log_scores: l,
            stage: Stage::DoublyStochastic,
        },
        stats,
    ))
}

/// Differentiable Sinkhorn on the tape. Takes and returns log-scores; the
/// returned variable is `log S`.
///
/// The number of rounds is decided from forward values, so gradients flow
/// through exactly the iterations that ran.
pub fn sinkhorn_tape(tape: &mut Tape, log_scores: Var, cfg: &SinkhornConfig) -> Result<(Var, SinkhornStats)> {
    cfg.validate()?;
    check_square(tape.value(log_scores))?;
    require_support(tape.value(log_scores))?;
    let mut l = log_scores;
    let mut stats = SinkhornStats {
        iterations: 0,
        max_deviation: f64::INFINITY,
        converged: false,
    };
    for it in 1..=cfg.max_iters {
        let r = tape.logsumexp(l, 1)?;
        l = tape.sub(l, r)?;
        let c = tape.logsumexp(l, 0)?;
        l = tape.sub(l, c)?;
        stats.iterations = it;
        stats.max_deviation = marginal_deviation(tape.value(l));
        if stats.max_deviation < cfg.tol {
            stats.converged = true;
            break;
        }
    }
    Ok((l, stats))
}
