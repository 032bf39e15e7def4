//! Classical pairwise-affinity matching: the `N² × N²` affinity matrix `K`,
//! spectral matching on it, and a learnable-affinity model that runs spectral
//! matching unrolled on the tape.
//!
//! Assignment vectors use column-major `vec`: entry `(i, a)` (node `i` of the
//! first graph, node `a` of the second) lives at index `i + a·N`.

mod gmn;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use gmn::{GmnConfig, GmnModel};

use crate::assign::{hungarian, Permutation};
use crate::diffcore::Tensor;
use crate::graphs::{EdgeFeatures, MatchingPair};
use crate::{Error, Result};

/// Sparse symmetric nonnegative affinity matrix over candidate matches.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseAffinity {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl PairwiseAffinity {
    /// Builds from `(row, col, value)` triples; duplicates are summed and
    /// zeros dropped. Rows and columns index `vec` positions in `0..n²`.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let size = n * n;
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (r, c, v) in triplets {
            if r >= size || c >= size {
                return Err(Error::Shape(format!("entry ({r}, {c}) outside {size}x{size}")));
            }
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("affinity entries must be finite and >= 0, got {v}")));
            }
            *map.entry((r, c)).or_insert(0.0) += v;
        }
        let mut row_ptr = vec![0; size + 1];
        let mut cols = Vec::with_capacity(map.len());
        let mut vals = Vec::with_capacity(map.len());
        for (&(r, c), &v) in &map {
            if v == 0.0 {
                continue;
            }
            row_ptr[r + 1] += 1;
            cols.push(c);
            vals.push(v);
        }
        for r in 0..size {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(PairwiseAffinity { n, row_ptr, cols, vals })
    }

    /// Number of nodes per graph; the matrix is `n² × n²`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn index(&self, i: usize, a: usize) -> usize {
        i + a * self.n
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[range.clone()].binary_search(&c) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// Nonzero entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n * self.n).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    pub fn to_dense(&self) -> Tensor {
        let size = self.n * self.n;
        let mut t = Tensor::zeros(vec![size, size]);
        for (r, c, v) in self.entries() {
            t.set(r, c, v);
        }
        t
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n * self.n)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|k| self.vals[k] * v[self.cols[k]])
                    .sum()
            })
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries().all(|(r, c, v)| self.get(c, r) == v)
    }
}

/// `exp(-‖x - y‖² / σ²)`.
pub fn gaussian_kernel(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (sigma * sigma)).exp()
}

fn edge_features<'a>(pair: &'a MatchingPair, graph: usize) -> Result<&'a EdgeFeatures> {
    let g = if graph == 1 { &pair.g1 } else { &pair.g2 };
    g.edge_features().ok_or(Error::MissingEdgeFeatures { graph })
}

/// Gaussian-kernel affinity: node-to-node similarities on the diagonal and
/// edge-to-edge similarities for every pair of directed edges `(i→j) ∈ E₁`,
/// `(a→b) ∈ E₂` at `((i, a), (j, b))`.
pub fn build_affinity_k(pair: &MatchingPair, sigma: f64) -> Result<PairwiseAffinity> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let n = pair.n();
    let (e1, e2) = (edge_features(pair, 1)?, edge_features(pair, 2)?);
    if e1.dim() != e2.dim() && !e1.edges().is_empty() && !e2.edges().is_empty() {
        return Err(Error::Shape(format!("edge feature dims differ: {} vs {}", e1.dim(), e2.dim())));
    }
    let idx = |i: usize, a: usize| i + a * n;
    let (f1, f2) = (pair.g1.node_features(), pair.g2.node_features());
    let mut triplets = Vec::new();
    for i in 0..n {
        for a in 0..n {
            let k = gaussian_kernel(f1.row(i), f2.row(a), sigma);
            triplets.push((idx(i, a), idx(i, a), k));
        }
    }
    for (r1, &(i, j)) in e1.edges().iter().enumerate() {
        let x = e1.features().row(r1);
        for (r2, &(a, b)) in e2.edges().iter().enumerate() {
            let k = gaussian_kernel(x, e2.features().row(r2), sigma);
            // both orientations of each undirected edge
            for ((p, q), (s, t)) in [((i, j), (a, b)), ((i, j), (b, a)), ((j, i), (a, b)), ((j, i), (b, a))] {
                triplets.push((idx(p, s), idx(q, t), k));
            }
        }
    }
    PairwiseAffinity::from_triplets(n, triplets)
}

/// `K = F₂ ⊗ F₁`, so `K[(i,a),(j,b)] = F₁[i,j]·F₂[a,b]`, optionally plus a
/// node-affinity matrix `kp[i, a]` on the diagonal.
pub fn kronecker_affinity(f1: &Tensor, f2: &Tensor, kp: Option<&Tensor>) -> Result<PairwiseAffinity> {
    let n = f1.rows();
    for (name, t) in [("F1", f1), ("F2", f2)].into_iter().chain(kp.map(|k| ("Kp", k))) {
        if t.rank() != 2 || t.rows() != n || t.cols() != n {
            return Err(Error::Shape(format!(
                "{name} has shape {:?}, expected {n}x{n}",
                t.shape()
            )));
        }
    }
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let x = f1.at(i, j);
            if x == 0.0 {
                continue;
            }
            for a in 0..n {
                for b in 0..n {
                    triplets.push((i + a * n, j + b * n, x * f2.at(a, b)));
                }
            }
        }
    }
    if let Some(kp) = kp {
        for i in 0..n {
            for a in 0..n {
                triplets.push((i + a * n, i + a * n, kp.at(i, a)));
            }
        }
    }
    PairwiseAffinity::from_triplets(n, triplets)
}

/// `vec(X)ᵀ K vec(X)` for a permutation `X` (`X[i, p(i)] = 1`).
pub fn qap_objective(k: &PairwiseAffinity, x: &Permutation) -> Result<f64> {
    if x.len() != k.n() {
        return Err(Error::Shape(format!("{}-node permutation for {}-node affinity", x.len(), k.n())));
    }
    let idx: Vec<usize> = (0..x.len()).map(|i| k.index(i, x.get(i))).collect();
    Ok(idx.iter().flat_map(|&r| idx.iter().map(move |&c| (r, c))).map(|(r, c)| k.get(r, c)).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub max_iters: usize,
    /// Stop once successive unit vectors differ by less than this (L2).
    pub tol: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            max_iters: 1000,
            tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralResult {
    /// Leading eigenvector reshaped to `N × N` (`x[i, a]`), unit Frobenius norm.
    pub assignment: Tensor,
    /// `vᵀ K v` for the returned unit vector.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration from the uniform vector towards the leading eigenvector.
pub fn spectral_matching(k: &PairwiseAffinity, cfg: &SpectralConfig) -> Result<SpectralResult> {
    if cfg.max_iters == 0 {
        return Err(Error::InvalidArgument("spectral max_iters must be at least 1".into()));
    }
    if k.nnz() == 0 {
        return Err(Error::ZeroMatrix);
    }
    let n = k.n();
    let size = n * n;
    let mut v = vec![1.0 / (size as f64).sqrt(); size];
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=cfg.max_iters {
        let mut w = k.matvec(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroMatrix);
        }
        w.iter_mut().for_each(|x| *x /= norm);
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        v = w;
        iterations = it;
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }
    let kv = k.matvec(&v);
    let objective = v.iter().zip(&kv).map(|(a, b)| a * b).sum();
    let mut assignment = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        for a in 0..n {
            assignment.set(i, a, v[i + a * n]);
        }
    }
    Ok(SpectralResult {
        assignment,
        objective,
        iterations,
        converged,
    })
}

/// How the Gaussian kernel width is chosen for the unlearned baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum KernelWidth {
    Fixed(f64),
    /// `σ² = factor · median` of the squared node-feature distances over all
    /// candidate matches of the pair.
    MedianScaled(f64),
}

impl KernelWidth {
    pub fn sigma(&self, pair: &MatchingPair) -> f64 {
        match *self {
            KernelWidth::Fixed(s) => s,
            KernelWidth::MedianScaled(factor) => {
                let (f1, f2) = (pair.g1.node_features(), pair.g2.node_features());
                let mut d2: Vec<f64> = (0..pair.n())
                    .flat_map(|i| (0..pair.n()).map(move |a| (i, a)))
                    .map(|(i, a)| f1.row(i).iter().zip(f2.row(a)).map(|(x, y)| (x - y) * (x - y)).sum())
                    .collect();
                d2.sort_unstable_by(f64::total_cmp);
                let m = d2.len();
                let median = if m % 2 == 1 { d2[m / 2] } else { 0.5 * (d2[m / 2 - 1] + d2[m / 2]) };
                (factor * median).sqrt().max(f64::MIN_POSITIVE)
            }
        }
    }
}

/// Spectral matching on a fixed Gaussian affinity, discretised by Hungarian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralBaseline {
    pub width: KernelWidth,
    pub spectral: SpectralConfig,
}

/// Median heuristic: `σ²` is the median squared node-feature distance.
impl Default for SpectralBaseline {
    fn default() -> Self {
        SpectralBaseline {
            width: KernelWidth::MedianScaled(1.0),
            spectral: SpectralConfig::default(),
        }
    }
}

impl SpectralBaseline {
    pub fn predict(&self, pair: &MatchingPair) -> Result<(Permutation, SpectralResult)> {
        let k = build_affinity_k(pair, self.width.sigma(pair))?;
        let res = spectral_matching(&k, &self.spectral)?;
        Ok((hungarian(&res.assignment)?, res))
    }
}
