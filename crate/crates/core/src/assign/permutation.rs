use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::{Error, Result};

/// A bijection on `0..n`, stored as `targets[i] = j` (row `i` selects column `j`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Permutation::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Vec<usize> {
        p.0
    }
}

impl Permutation {
    pub fn new(targets: Vec<usize>) -> Result<Self> {
        let n = targets.len();
        let mut seen = vec![false; n];
        for (i, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(Error::InvalidPermutation(format!(
                    "entry {i} maps to {t}, outside 0..{n}"
                )));
            }
            if std::mem::replace(&mut seen[t], true) {
                return Err(Error::InvalidPermutation(format!("column {t} is used twice")));
            }
        }
        Ok(Permutation(targets))
    }

    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    /// Uniformly random permutation (Fisher-Yates).
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        Permutation(v)
    }

    /// Reads a 0/1 matrix with exactly one unit per row and column.
    pub fn from_matrix(m: &Tensor) -> Result<Self> {
        if m.rank() != 2 || m.rows() != m.cols() {
            return Err(Error::InvalidPermutation(format!(
                "matrix must be square, got shape {:?}",
                m.shape()
            )));
        }
        let n = m.rows();
        let mut targets = Vec::with_capacity(n);
        for i in 0..n {
            let row = m.row(i);
            if row.iter().any(|&x| x != 0.0 && x != 1.0) {
                return Err(Error::InvalidPermutation(format!("row {i} is not binary")));
            }
            let ones: Vec<usize> = (0..n).filter(|&j| row[j] == 1.0).collect();
            if ones.len() != 1 {
                return Err(Error::InvalidPermutation(format!(
                    "row {i} has {} ones",
                    ones.len()
                )));
            }
            targets.push(ones[0]);
        }
        Permutation::new(targets)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn get(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn to_matrix(&self) -> Tensor {
        let n = self.0.len();
        let mut m = Tensor::zeros(vec![n, n]);
        for (i, &j) in self.0.iter().enumerate() {
            m.set(i, j, 1.0);
        }
        m
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j] = i;
        }
        Permutation(inv)
    }

    /// `self ∘ other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &Permutation) -> Permutation {
        Permutation(other.0.iter().map(|&j| self.0[j]).collect())
    }

    /// Number of rows whose target agrees with `other`.
    pub fn agreements(&self, other: &Permutation) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a == b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_and_validation() {
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        assert_eq!(Permutation::from_matrix(&p.to_matrix()).unwrap(), p);
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        let bad = Tensor::new(vec![2, 3], vec![1., 0., 0., 0., 1., 0.]).unwrap();
        assert!(Permutation::from_matrix(&bad).is_err());
    }

    #[test]
    fn inverse_composes_to_identity() {
        let p = Permutation::new(vec![3, 1, 0, 2]).unwrap();
        assert_eq!(p.compose(&p.inverse()), Permutation::identity(4));
        assert_eq!(p.inverse().compose(&p), Permutation::identity(4));
    }
}
