//! Keypoint graphs, matching pairs, topology construction, the synthetic pair
//! generator, and dataset files.

mod dataset;
mod delaunay;
mod synthetic;

pub use dataset::{load_pairs, read_pairs, save_pairs, write_pairs};
pub use delaunay::{delaunay_adjacency, fully_connected_adjacency};
pub use synthetic::{
    generate_synthetic_instance, generate_synthetic_pair, AffineTransform, LatentGraph, SyntheticConfig,
    SyntheticInstance,
};

use crate::assign::Permutation;
use crate::diffcore::Tensor;
use crate::{Error, Result};

/// Symmetric 0/1 adjacency with an empty diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Adjacency {
            n,
            bits: vec![false; n * n],
        }
    }

    /// Undirected edges; each `(i, j)` sets both orientations.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Adjacency::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!("edge ({i}, {j}) outside 0..{n}")));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop on node {i}")));
            }
            a.insert(i, j);
        }
        Ok(a)
    }

    /// Reads a 0/1 matrix, checking symmetry and the zero diagonal.
    pub fn from_matrix(m: &Tensor) -> Result<Self> {
        if m.rank() != 2 || m.rows() != m.cols() {
            return Err(Error::InvalidGraph(format!("adjacency must be square, got {:?}", m.shape())));
        }
        let n = m.rows();
        let mut a = Adjacency::empty(n);
        for i in 0..n {
            for j in 0..n {
                match m.at(i, j) {
                    0.0 => {}
                    1.0 if i != j => a.bits[i * n + j] = true,
                    1.0 => return Err(Error::InvalidGraph(format!("self-loop on node {i}"))),
                    v => return Err(Error::InvalidGraph(format!("entry ({i}, {j}) = {v} is not 0/1"))),
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                if a.bits[i * n + j] != a.bits[j * n + i] {
                    return Err(Error::InvalidGraph(format!("adjacency not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(a)
    }

    pub(crate) fn insert(&mut self, i: usize, j: usize) {
        self.bits[i * self.n + j] = true;
        self.bits[j * self.n + i] = true;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.bits[i * self.n..(i + 1) * self.n].iter().filter(|&&b| b).count()
    }

    /// Undirected edges `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.contains(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Both orientations of every edge, in lexicographic order.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.contains(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count() / 2
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::new(vec![self.n, self.n], data).expect("adjacency shape")
    }

    /// Row-normalized adjacency `D⁻¹A`; rows of isolated nodes stay zero.
    pub fn mean_aggregator(&self) -> Tensor {
        let mut t = self.to_tensor();
        for i in 0..self.n {
            let d = self.degree(i);
            if d > 0 {
                let inv = 1.0 / d as f64;
                for j in 0..self.n {
                    if self.contains(i, j) {
                        t.set(i, j, inv);
                    }
                }
            }
        }
        t
    }

    /// Relabels nodes: node `i` becomes node `p(i)`.
    pub fn relabeled(&self, p: &Permutation) -> Adjacency {
        let mut out = Adjacency::empty(self.n);
        for (i, j) in self.edges() {
            out.insert(p.get(i), p.get(j));
        }
        out
    }
}

/// Per-edge feature vectors, one row per undirected edge.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeFeatures {
    edges: Vec<(usize, usize)>,
    features: Tensor,
}

impl EdgeFeatures {
    /// `edges` must be the graph's undirected edges with `i < j`, matching the
    /// rows of `features`.
    pub fn new(edges: Vec<(usize, usize)>, features: Tensor) -> Result<Self> {
        if features.rank() != 2 || features.rows() != edges.len() {
            return Err(Error::InvalidGraph(format!(
                "{} edges but edge feature matrix has shape {:?}",
                edges.len(),
                features.shape()
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidGraph("edge features must be finite".into()));
        }
        Ok(EdgeFeatures { edges, features })
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Feature row of the undirected edge `{i, j}`.
    pub fn get(&self, i: usize, j: usize) -> Option<&[f64]> {
        let key = (i.min(j), i.max(j));
        self.edges
            .binary_search(&key)
            .ok()
            .map(|r| self.features.row(r))
    }
}

/// One graph of a matching problem.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointGraph {
    coords: Vec<[f64; 2]>,
    node_features: Tensor,
    adjacency: Adjacency,
    edge_features: Option<EdgeFeatures>,
}

impl KeypointGraph {
    pub fn new(
        coords: Vec<[f64; 2]>,
        node_features: Tensor,
        adjacency: Adjacency,
        edge_features: Option<EdgeFeatures>,
    ) -> Result<Self> {
        let n = coords.len();
        if node_features.rank() != 2 || node_features.rows() != n {
            return Err(Error::InvalidGraph(format!(
                "{n} nodes but node feature matrix has shape {:?}",
                node_features.shape()
            )));
        }
        if adjacency.n() != n {
            return Err(Error::InvalidGraph(format!("{n} nodes but adjacency is {}x{0}", adjacency.n())));
        }
        if coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidGraph("coordinates must be finite".into()));
        }
        if !node_features.is_finite() {
            return Err(Error::InvalidGraph("node features must be finite".into()));
        }
        if let Some(ef) = &edge_features {
            if ef.edges() != adjacency.edges().as_slice() {
                return Err(Error::InvalidGraph("edge features do not match the adjacency edges".into()));
            }
        }
        Ok(KeypointGraph {
            coords,
            node_features,
            adjacency,
            edge_features,
        })
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// Coordinates as an `N×2` tensor.
    pub fn coords_tensor(&self) -> Tensor {
        let data = self.coords.iter().flat_map(|c| c.iter().copied()).collect();
        Tensor::new(vec![self.coords.len(), 2], data).expect("coords shape")
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn edge_features(&self) -> Option<&EdgeFeatures> {
        self.edge_features.as_ref()
    }

    /// Same graph with node `i` moved to position `p(i)`.
    pub fn relabeled(&self, p: &Permutation) -> KeypointGraph {
        let inv = p.inverse();
        let coords = inv.as_slice().iter().map(|&i| self.coords[i]).collect();
        let node_features = self.node_features.select_rows(inv.as_slice());
        let adjacency = self.adjacency.relabeled(p);
        let edge_features = self.edge_features.as_ref().map(|ef| {
            let edges = adjacency.edges();
            let rows: Vec<usize> = edges
                .iter()
                .map(|&(a, b)| {
                    let (i, j) = (inv.get(a), inv.get(b));
                    ef.edges.binary_search(&(i.min(j), i.max(j))).expect("relabeled edge")
                })
                .collect();
            EdgeFeatures {
                edges,
                features: ef.features.select_rows(&rows),
            }
        });
        KeypointGraph {
            coords,
            node_features,
            adjacency,
            edge_features,
        }
    }
}

/// Two graphs with equal node count and their ground-truth correspondence:
/// node `i` of `g1` matches node `gt(i)` of `g2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchingPair {
    pub g1: KeypointGraph,
    pub g2: KeypointGraph,
    pub gt: Permutation,
}

impl MatchingPair {
    pub fn new(g1: KeypointGraph, g2: KeypointGraph, gt: Permutation) -> Result<Self> {
        if g1.n() != g2.n() {
            return Err(Error::InvalidGraph(format!("graph sizes differ: {} vs {}", g1.n(), g2.n())));
        }
        if gt.len() != g1.n() {
            return Err(Error::InvalidPermutation(format!(
                "ground truth has {} entries for {} nodes",
                gt.len(),
                g1.n()
            )));
        }
        Ok(MatchingPair { g1, g2, gt })
    }

    pub fn n(&self) -> usize {
        self.g1.n()
    }

    /// Relabels `g1` by `p1` and `g2` by `p2`, updating the ground truth.
    pub fn relabeled(&self, p1: &Permutation, p2: &Permutation) -> MatchingPair {
        // new node p1(i) in g1 matches new node p2(gt(i)) in g2
        let gt = p2.compose(&self.gt).compose(&p1.inverse());
        MatchingPair {
            g1: self.g1.relabeled(p1),
            g2: self.g2.relabeled(p2),
            gt,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_validation() {
        let m = Tensor::new(vec![2, 2], vec![0., 1., 0., 0.]).unwrap();
        assert!(Adjacency::from_matrix(&m).is_err());
        let m = Tensor::new(vec![2, 2], vec![1., 0., 0., 0.]).unwrap();
        assert!(Adjacency::from_matrix(&m).is_err());
        let m = Tensor::new(vec![2, 2], vec![0., 1., 1., 0.]).unwrap();
        let a = Adjacency::from_matrix(&m).unwrap();
        assert_eq!(a.edges(), vec![(0, 1)]);
        assert_eq!(a.to_tensor(), m);
        assert!(Adjacency::from_edges(3, &[(1, 1)]).is_err());
    }

    #[test]
    fn mean_aggregator_leaves_isolated_rows_zero() {
        let a = Adjacency::from_edges(4, &[(0, 1), (0, 2)]).unwrap();
        let m = a.mean_aggregator();
        assert_eq!(m.row(0), &[0.0, 0.5, 0.5, 0.0]);
        assert_eq!(m.row(3), &[0.0; 4]);
    }

    #[test]
    fn pair_rejects_mismatched_sizes() {
        let g = |n: usize| {
            KeypointGraph::new(vec![[0.0, 0.0]; n], Tensor::zeros(vec![n, 2]), Adjacency::empty(n), None).unwrap()
        };
        assert!(MatchingPair::new(g(3), g(4), Permutation::identity(3)).is_err());
        assert!(MatchingPair::new(g(3), g(3), Permutation::identity(2)).is_err());
    }
}
