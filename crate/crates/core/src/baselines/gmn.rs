//! Learnable-affinity matcher: per-dimension weighted Gaussian node and edge
//! affinities, spectral matching unrolled on the tape, then Sinkhorn.

use serde::{Deserialize, Serialize};

use crate::assign::{hungarian, sinkhorn_tape, SinkhornConfig};
use crate::diffcore::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::embed::{Forward, Prediction};
use crate::graphs::{KeypointGraph, MatchingPair};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmnConfig {
    pub node_dim: usize,
    pub edge_dim: usize,
    /// Unrolled power-iteration steps.
    pub power_iters: usize,
    /// Temperature applied to the eigenvector before Sinkhorn.
    pub tau: f64,
}

impl GmnConfig {
    pub fn new(node_dim: usize, edge_dim: usize) -> Self {
        GmnConfig {
            node_dim,
            edge_dim,
            power_iters: 20,
            tau: 0.005,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.node_dim == 0 || self.edge_dim == 0 {
            return Err(Error::Config("GMN needs node and edge features".into()));
        }
        if self.power_iters == 0 {
            return Err(Error::Config("GMN power_iters must be at least 1".into()));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmnModel {
    config: GmnConfig,
    params: ParamStore,
    /// Log-weights; the kernel uses `exp(-Σ_d exp(θ_d)(x_d - y_d)²)`.
    theta_node: ParamId,
    theta_edge: ParamId,
}

/// Directed edges with their feature rows and 0/1 source/target selectors.
struct DirectedEdges {
    features: Tensor,
    source: Tensor,
    target: Tensor,
}

fn directed_edges(g: &KeypointGraph, graph: usize) -> Result<DirectedEdges> {
    let ef = g.edge_features().ok_or(Error::MissingEdgeFeatures { graph })?;
    let n = g.n();
    let m = 2 * ef.edges().len();
    let mut rows = Vec::with_capacity(m);
    let mut source = Tensor::zeros(vec![m, n]);
    let mut target = Tensor::zeros(vec![m, n]);
    for (r, &(i, j)) in ef.edges().iter().enumerate() {
        for (k, (s, t)) in [(i, j), (j, i)].into_iter().enumerate() {
            rows.push(ef.features().row(r).to_vec());
            source.set(2 * r + k, s, 1.0);
            target.set(2 * r + k, t, 1.0);
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidGraph(format!("graph {graph} has no edges")));
    }
    Ok(DirectedEdges {
        features: Tensor::from_rows(&rows)?,
        source,
        target,
    })
}

/// `exp(-Σ_d w_d (x_pd - y_qd)²)` for every row pair, with `w = exp(θ)`.
fn weighted_gaussian(tape: &mut Tape, theta: Var, x: &Tensor, y: &Tensor) -> Result<Var> {
    let w = tape.exp(theta)?;
    let wt = tape.transpose(w)?;
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let x2 = tape.constant(x.map(|v| v * v));
    let y2 = tape.constant(y.map(|v| v * v));
    let a = tape.matmul(x2, wt)?;
    let b = tape.matmul(y2, wt)?;
    let b = tape.transpose(b)?;
    let xw = tape.mul(xv, w)?;
    let yt = tape.transpose(yv)?;
    let c = tape.matmul(xw, yt)?;
    let c = tape.scale(c, -2.0)?;
    let ab = tape.add(a, b)?;
    let d = tape.add(ab, c)?;
    let d = tape.clamp_min(d, 0.0)?;
    let neg = tape.scale(d, -1.0)?;
    Ok(tape.exp(neg)?)
}

impl GmnModel {
    /// Starts from unit-average weights, `w_d = 1 / dim`.
    pub fn new(config: GmnConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let theta_node = params.add(
            "gmn.theta_node",
            Tensor::full(vec![1, config.node_dim], -(config.node_dim as f64).ln()),
        );
        let theta_edge = params.add(
            "gmn.theta_edge",
            Tensor::full(vec![1, config.edge_dim], -(config.edge_dim as f64).ln()),
        );
        Ok(GmnModel {
            config,
            params,
            theta_node,
            theta_edge,
        })
    }

    pub fn config(&self) -> &GmnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn forward(&self, tape: &mut Tape, pair: &MatchingPair, sinkhorn: &SinkhornConfig) -> Result<Forward> {
        self.forward_with(&self.params, tape, pair, sinkhorn)
    }

    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        pair: &MatchingPair,
        sinkhorn: &SinkhornConfig,
    ) -> Result<Forward> {
        let n = pair.n();
        for g in [&pair.g1, &pair.g2] {
            if g.feature_dim() != self.config.node_dim {
                return Err(Error::Shape(format!(
                    "GMN expects {}-dim node features, graph has {}",
                    self.config.node_dim,
                    g.feature_dim()
                )));
            }
        }
        let (d1, d2) = (directed_edges(&pair.g1, 1)?, directed_edges(&pair.g2, 2)?);
        if d1.features.cols() != self.config.edge_dim || d2.features.cols() != self.config.edge_dim {
            return Err(Error::Shape(format!(
                "GMN expects {}-dim edge features",
                self.config.edge_dim
            )));
        }
        let theta_n = tape.param(store, self.theta_node);
        let theta_e = tape.param(store, self.theta_edge);
        let kn = weighted_gaussian(tape, theta_n, pair.g1.node_features(), pair.g2.node_features())?;
        let ke = weighted_gaussian(tape, theta_e, &d1.features, &d2.features)?;

        let s1t = tape.constant(d1.source.transposed());
        let t1 = tape.constant(d1.target);
        let s2 = tape.constant(d2.source);
        let t2t = tape.constant(d2.target.transposed());

        let mut v = tape.constant(Tensor::full(vec![n, n], 1.0 / n as f64));
        for _ in 0..self.config.power_iters {
            let node = tape.mul(kn, v)?;
            let gathered = tape.matmul(t1, v)?;
            let gathered = tape.matmul(gathered, t2t)?;
            let weighted = tape.mul(ke, gathered)?;
            let edge = tape.matmul(s1t, weighted)?;
            let edge = tape.matmul(edge, s2)?;
            let kv = tape.add(node, edge)?;
            let sq = tape.mul(kv, kv)?;
            let norm = tape.sum(sq)?;
            let norm = tape.sqrt(norm)?;
            v = tape.div(kv, norm)?;
        }
        let scores = tape.scale(v, 1.0 / self.config.tau)?;
        let (log_s, stats) = sinkhorn_tape(tape, scores, sinkhorn)?;
        let s = tape.exp(log_s)?;
        Ok(Forward { log_s, s, stats })
    }

    pub fn predict(&self, pair: &MatchingPair, sinkhorn: &SinkhornConfig) -> Result<Prediction> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, pair, sinkhorn)?;
        let s = tape.value(f.s).clone();
        let permutation = hungarian(&s)?;
        Ok(Prediction {
            s,
            permutation,
            stats: f.stats,
        })
    }
}
