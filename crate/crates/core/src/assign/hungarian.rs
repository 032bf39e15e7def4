//! Exact linear assignment by the O(n³) shortest-augmenting-path Hungarian method.

use super::Permutation;
use crate::diffcore::Tensor;
use crate::{Error, Result};

/// Permutation maximizing `Σ_i scores[i, p(i)]`.
///
/// Deterministic: among equally good augmenting columns the lowest index wins.
pub fn hungarian(scores: &Tensor) -> Result<Permutation> {
    if scores.rank() != 2 || scores.rows() != scores.cols() {
        return Err(Error::Shape(format!(
            "assignment needs a square matrix, got {:?}",
            scores.shape()
        )));
    }
    if !scores.is_finite() {
        return Err(Error::InvalidArgument("assignment scores must be finite".into()));
    }
    let n = scores.rows();
    if n == 0 {
        return Ok(Permutation::identity(0));
    }
    // minimize the negated scores; indices are 1-based with 0 as a sentinel
    let cost = |i: usize, j: usize| -scores.at(i - 1, j - 1);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut targets = vec![0usize; n];
    for j in 1..=n {
        targets[p[j] - 1] = j - 1;
    }
    Permutation::new(targets)
}

/// `Σ_i scores[i, p(i)]`, summed in row order.
pub fn assignment_score(scores: &Tensor, p: &Permutation) -> f64 {
    p.as_slice()
        .iter()
        .enumerate()
        .map(|(i, &j)| scores.at(i, j))
        .sum()
}
