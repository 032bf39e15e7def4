//! Node embedding networks and the matching models built from them.
//!
//! - **PIA**: three intra-graph convolutions, affinity, Sinkhorn.
//! - **PCA**: one intra-graph convolution, a preliminary assignment `Ŝ` from
//!   its own affinity, one cross-graph convolution driven by `Ŝ`, a second
//!   intra-graph convolution, final affinity and Sinkhorn.
//! - **PCA-iterative**: like PCA but `Ŝ` starts at zero and is re-predicted
//!   from the final affinity for a fixed number of rounds.
//!
//! Every reduction across nodes goes through an order-independent sum, so
//! relabelling the input graphs permutes the output bit-for-bit.

mod layers;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use layers::{affinity_matrix, glorot, AffinityMetric, CrossConvLayer, GConvLayer, Linear, MAX_EXPONENT};

use crate::assign::{hungarian, sinkhorn_tape, Permutation, SinkhornConfig, SinkhornStats};
use crate::diffcore::{ParamStore, Tape, Tensor, Var};
use crate::graphs::{KeypointGraph, MatchingPair};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Architecture {
    Pia,
    Pca,
    PcaIterative { iterations: usize },
}

impl Architecture {
    pub fn name(&self) -> String {
        match self {
            Architecture::Pia => "PIA".into(),
            Architecture::Pca => "PCA".into(),
            Architecture::PcaIterative { iterations } => format!("PCA-iter{iterations}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Node feature dimension of the input graphs.
    pub input_dim: usize,
    pub hidden_width: usize,
    pub tau: f64,
    /// Scale each input feature row to unit length before the first layer.
    pub normalize_input: bool,
}

impl ModelConfig {
    pub const DEFAULT_TAU: f64 = 0.005;

    pub fn new(architecture: Architecture, input_dim: usize, hidden_width: usize) -> Self {
        ModelConfig {
            architecture,
            input_dim,
            hidden_width,
            tau: Self::DEFAULT_TAU,
            normalize_input: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_width == 0 {
            return Err(Error::Config(format!(
                "input_dim and hidden_width must be positive, got {} and {}",
                self.input_dim, self.hidden_width
            )));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive and finite, got {}", self.tau)));
        }
        if let Architecture::PcaIterative { iterations: 0 } = self.architecture {
            return Err(Error::Config("PCA-iterative needs at least one iteration".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Layers {
    Pia {
        gconv: [GConvLayer; 3],
        affinity: AffinityMetric,
    },
    Pca {
        gconv1: GConvLayer,
        affinity_hat: AffinityMetric,
        cross: CrossConvLayer,
        gconv2: GConvLayer,
        affinity: AffinityMetric,
    },
    PcaIterative {
        gconv1: GConvLayer,
        cross: CrossConvLayer,
        gconv2: GConvLayer,
        affinity: AffinityMetric,
        iterations: usize,
    },
}

/// Result of a recorded forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `log S` of the final doubly-stochastic matrix.
    pub log_s: Var,
    /// `S` itself.
    pub s: Var,
    pub stats: SinkhornStats,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub s: Tensor,
    pub permutation: Permutation,
    pub stats: SinkhornStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchingModel {
    config: ModelConfig,
    params: ParamStore,
    layers: Layers,
}

impl MatchingModel {
    /// Parameters are created in a fixed order, so the same `rng` state
    /// always yields the same model.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d0, w, tau) = (config.input_dim, config.hidden_width, config.tau);
        let mut store = ParamStore::new();
        let s = &mut store;
        let layers = match config.architecture {
            Architecture::Pia => Layers::Pia {
                gconv: [
                    GConvLayer::new(s, "gconv1", d0, w, rng),
                    GConvLayer::new(s, "gconv2", w, w, rng),
                    GConvLayer::new(s, "gconv3", w, w, rng),
                ],
                affinity: AffinityMetric::new(s, "affinity", w, tau, rng)?,
            },
            Architecture::Pca => Layers::Pca {
                gconv1: GConvLayer::new(s, "gconv1", d0, w, rng),
                affinity_hat: AffinityMetric::new(s, "affinity_hat", w, tau, rng)?,
                cross: CrossConvLayer::new(s, "cross", w, rng),
                gconv2: GConvLayer::new(s, "gconv2", w, w, rng),
                affinity: AffinityMetric::new(s, "affinity", w, tau, rng)?,
            },
            Architecture::PcaIterative { iterations } => Layers::PcaIterative {
                gconv1: GConvLayer::new(s, "gconv1", d0, w, rng),
                cross: CrossConvLayer::new(s, "cross", w, rng),
                gconv2: GConvLayer::new(s, "gconv2", w, w, rng),
                affinity: AffinityMetric::new(s, "affinity", w, tau, rng)?,
                iterations,
            },
        };
        Ok(MatchingModel {
            config,
            params: store,
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn input(&self, tape: &mut Tape, g: &KeypointGraph) -> Result<(Var, Var)> {
        if g.feature_dim() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "model expects {}-dim node features, graph has {}",
                self.config.input_dim,
                g.feature_dim()
            )));
        }
        let x = if self.config.normalize_input {
            normalize_rows(g.node_features())
        } else {
            g.node_features().clone()
        };
        Ok((tape.constant(g.adjacency().mean_aggregator()), tape.constant(x)))
    }

    /// Records the forward pass with the model's own parameters.
    pub fn forward(&self, tape: &mut Tape, pair: &MatchingPair, sinkhorn: &SinkhornConfig) -> Result<Forward> {
        self.forward_with(&self.params, tape, pair, sinkhorn)
    }

    /// Records the forward pass reading parameter values from `store`, which
    /// must have the layout of [`MatchingModel::params`].
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        pair: &MatchingPair,
        sinkhorn: &SinkhornConfig,
    ) -> Result<Forward> {
        let (a1, x1) = self.input(tape, &pair.g1)?;
        let (a2, x2) = self.input(tape, &pair.g2)?;
        let (log_s, stats) = match &self.layers {
            Layers::Pia { gconv, affinity } => {
                let (mut h1, mut h2) = (x1, x2);
                for layer in gconv {
                    h1 = layer.forward(tape, store, a1, h1)?;
                    h2 = layer.forward(tape, store, a2, h2)?;
                }
                let l = affinity.log_scores(tape, store, h1, h2)?;
                sinkhorn_tape(tape, l, sinkhorn)?
            }
            Layers::Pca {
                gconv1,
                affinity_hat,
                cross,
                gconv2,
                affinity,
            } => {
                let h1 = gconv1.forward(tape, store, a1, x1)?;
                let h2 = gconv1.forward(tape, store, a2, x2)?;
                let l_hat = affinity_hat.log_scores(tape, store, h1, h2)?;
                let (log_s_hat, _) = sinkhorn_tape(tape, l_hat, sinkhorn)?;
                let s_hat = tape.exp(log_s_hat)?;
                let (c1, c2) = cross.forward(tape, store, s_hat, h1, h2)?;
                let h1 = gconv2.forward(tape, store, a1, c1)?;
                let h2 = gconv2.forward(tape, store, a2, c2)?;
                let l = affinity.log_scores(tape, store, h1, h2)?;
                sinkhorn_tape(tape, l, sinkhorn)?
            }
            Layers::PcaIterative {
                gconv1,
                cross,
                gconv2,
                affinity,
                iterations,
            } => {
                let mut h1 = gconv1.forward(tape, store, a1, x1)?;
                let mut h2 = gconv1.forward(tape, store, a2, x2)?;
                let n = pair.n();
                let mut s_hat = tape.constant(Tensor::zeros(vec![n, n]));
                let mut last = None;
                for _ in 0..*iterations {
                    let (c1, c2) = cross.forward(tape, store, s_hat, h1, h2)?;
                    h1 = gconv2.forward(tape, store, a1, c1)?;
                    h2 = gconv2.forward(tape, store, a2, c2)?;
                    let l = affinity.log_scores(tape, store, h1, h2)?;
                    let (log_s, stats) = sinkhorn_tape(tape, l, sinkhorn)?;
                    s_hat = tape.exp(log_s)?;
                    last = Some((log_s, stats));
                }
                last.expect("iterations validated >= 1")
            }
        };
        let s = tape.exp(log_s)?;
        Ok(Forward { log_s, s, stats })
    }

    /// Doubly-stochastic `S` and its Hungarian discretisation.
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

/// Scales every row to unit Euclidean length; zero rows stay zero.
pub fn normalize_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    for i in 0..x.rows() {
        let row = &mut out.data_mut()[i * cols..(i + 1) * cols];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{generate_synthetic_pair, SyntheticConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_pair(seed: u64) -> MatchingPair {
        let cfg = SyntheticConfig {
            k_pt: 6,
            node_feature_dim: 5,
            edge_feature_dim: 0,
            ..SyntheticConfig::default()
        };
        generate_synthetic_pair(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = ModelConfig::new(Architecture::PcaIterative { iterations: 0 }, 5, 4);
        assert!(MatchingModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn outputs_are_doubly_stochastic() {
        let pair = small_pair(1);
        for arch in [
            Architecture::Pia,
            Architecture::Pca,
            Architecture::PcaIterative { iterations: 3 },
        ] {
            let mut cfg = ModelConfig::new(arch, 5, 8);
            cfg.tau = 0.5;
            let model = MatchingModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            let p = model.predict(&pair, &SinkhornConfig::EVAL).unwrap();
            assert!(p.stats.converged, "{arch:?}");
            for i in 0..6 {
                let r: f64 = p.s.row(i).iter().sum();
                let c: f64 = (0..6).map(|k| p.s.at(k, i)).sum();
                assert!((r - 1.0).abs() < 1e-6 && (c - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn feature_dim_mismatch_is_an_error() {
        let model = MatchingModel::new(
            ModelConfig::new(Architecture::Pia, 7, 4),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(matches!(
            model.predict(&small_pair(0), &SinkhornConfig::EVAL),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn normalize_rows_handles_zero_rows() {
        let x = Tensor::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        assert_eq!(normalize_rows(&x).data(), &[0.6, 0.8, 0.0, 0.0]);
    }
}
