//! Training objectives and the matching-accuracy metric.

use crate::assign::Permutation;
use crate::diffcore::{Tape, Tensor, Var, LOG_FLOOR};
use crate::graphs::MatchingPair;
use crate::{Error, Result};

fn check_square(tape: &Tape, s: Var, n: usize) -> Result<()> {
    let shape = tape.shape(s);
    if shape != [n, n] {
        return Err(Error::Shape(format!(
            "S has shape {shape:?}, ground truth is {n}x{n}"
        )));
    }
    Ok(())
}

/// Binary cross-entropy between `S` and the ground-truth permutation matrix,
/// summed over all `N²` entries, with logs clamped at [`LOG_FLOOR`].
pub fn permutation_loss(tape: &mut Tape, s: Var, gt: &Permutation) -> Result<Var> {
    let n = gt.len();
    check_square(tape, s, n)?;
    let g = gt.to_matrix();
    let not_g = g.map(|v| 1.0 - v);
    let g = tape.constant(g);
    let not_g = tape.constant(not_g);

    let log_s = tape.clamped_log(s, LOG_FLOOR)?;
    let neg = tape.scale(s, -1.0)?;
    let one_minus = tape.add_scalar(neg, 1.0)?;
    let log_1ms = tape.clamped_log(one_minus, LOG_FLOOR)?;

    let pos = tape.mul(g, log_s)?;
    let negt = tape.mul(not_g, log_1ms)?;
    let both = tape.add(pos, negt)?;
    let total = tape.sum(both)?;
    Ok(tape.scale(total, -1.0)?)
}

/// Keypoint coordinates and smoothing term for the offset loss.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetContext {
    pub p1: Tensor,
    pub p2: Tensor,
    pub epsilon: f64,
    /// Ground-truth displacements; derived from the permutation when absent.
    pub gt_offsets: Option<Tensor>,
}

impl OffsetContext {
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(p1: Tensor, p2: Tensor, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        if p1.rank() != 2 || p1.cols() != 2 || p1.shape() != p2.shape() {
            return Err(Error::Shape(format!(
                "coordinate lists must both be Nx2, got {:?} and {:?}",
                p1.shape(),
                p2.shape()
            )));
        }
        Ok(OffsetContext {
            p1,
            p2,
            epsilon,
            gt_offsets: None,
        })
    }

    pub fn from_pair(pair: &MatchingPair) -> Self {
        OffsetContext {
            p1: pair.g1.coords_tensor(),
            p2: pair.g2.coords_tensor(),
            epsilon: Self::DEFAULT_EPSILON,
            gt_offsets: None,
        }
    }

    fn gt_offsets(&self, gt: &Permutation) -> Tensor {
        if let Some(d) = &self.gt_offsets {
            return d.clone();
        }
        let n = gt.len();
        let mut d = Tensor::zeros(vec![n, 2]);
        for i in 0..n {
            let j = gt.get(i);
            for c in 0..2 {
                d.set(i, c, self.p2.at(j, c) - self.p1.at(i, c));
            }
        }
        d
    }
}

/// `Σ_i sqrt(‖d_i − d_i^gt‖² + ε)` with `d_i = Σ_j S_ij P2_j − P1_i`.
pub fn offset_loss(tape: &mut Tape, s: Var, ctx: &OffsetContext, gt: &Permutation) -> Result<Var> {
    let n = gt.len();
    check_square(tape, s, n)?;
    if ctx.p1.rows() != n {
        return Err(Error::Shape(format!(
            "{} keypoints in offset context, S is {n}x{n}",
            ctx.p1.rows()
        )));
    }
    let dgt = ctx.gt_offsets(gt);
    let p2 = tape.constant(ctx.p2.clone());
    let p1 = tape.constant(ctx.p1.clone());
    let dgt = tape.constant(dgt);

    let centroid = tape.matmul(s, p2)?;
    let d = tape.sub(centroid, p1)?;
    let diff = tape.sub(d, dgt)?;
    let sq = tape.mul(diff, diff)?;
    let sq = tape.sum_axis(sq, 1, false)?;
    let sq = tape.add_scalar(sq, ctx.epsilon)?;
    let r = tape.sqrt(sq)?;
    Ok(tape.sum(r)?)
}

/// Evaluates [`permutation_loss`] on a plain matrix.
pub fn permutation_loss_value(s: &Tensor, gt: &Permutation) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(s.clone());
    let l = permutation_loss(&mut tape, v, gt)?;
    Ok(tape.value(l).item())
}

/// Evaluates [`offset_loss`] on a plain matrix.
pub fn offset_loss_value(s: &Tensor, ctx: &OffsetContext, gt: &Permutation) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(s.clone());
    let l = offset_loss(&mut tape, v, ctx, gt)?;
    Ok(tape.value(l).item())
}

/// Fraction of nodes whose predicted match agrees with the ground truth.
pub fn matching_accuracy(pred: &Permutation, gt: &Permutation) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "predicted permutation has {} nodes, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::InvalidPermutation("empty permutation".into()));
    }
    Ok(pred.agreements(gt) as f64 / gt.len() as f64)
}

/// [`matching_accuracy`] on 0/1 matrices; rejects anything that is not a
/// permutation matrix.
pub fn matching_accuracy_matrices(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    matching_accuracy(&Permutation::from_matrix(pred)?, &Permutation::from_matrix(gt)?)
}

/// A case the offset loss cannot see: three mirror-symmetric keypoints on a
/// line, `spacing` apart, ground truth the identity. The centre's row keeps
/// only `1 - 2·alpha` on itself and splits the rest over its two mirror
/// images, whose centroid is exactly the centre; the outer rows hand `alpha`
/// back to the centre column so `S` stays doubly stochastic.
///
/// The offset loss is about `2·alpha·spacing` while the permutation loss does
/// not depend on the geometry at all.
pub fn offset_blind_spot(spacing: f64, alpha: f64) -> Result<(Tensor, OffsetContext, Permutation)> {
    if !(0.0 < alpha && alpha < 0.5) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    let p = Tensor::from_rows(&[[-spacing, 0.0], [0.0, 0.0], [spacing, 0.0]])?;
    let s = Tensor::from_rows(&[
        [1.0 - alpha, alpha, 0.0],
        [alpha, 1.0 - 2.0 * alpha, alpha],
        [0.0, alpha, 1.0 - alpha],
    ])?;
    let ctx = OffsetContext::new(p.clone(), p, OffsetContext::DEFAULT_EPSILON)?;
    Ok((s, ctx, Permutation::identity(3)))
}
