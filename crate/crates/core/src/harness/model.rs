use rand::Rng;

use super::config::{ExperimentConfig, Method};
use crate::assign::{Permutation, SinkhornConfig, SinkhornStats};
use crate::baselines::{GmnConfig, GmnModel, SpectralBaseline};
use crate::diffcore::{ParamStore, Tape};
use crate::embed::{Architecture, Forward, MatchingModel, ModelConfig};
use crate::graphs::MatchingPair;
use crate::Result;

/// Feature dimensions a model is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputDims {
    pub node: usize,
    pub edge: usize,
}

impl InputDims {
    pub fn of(pair: &MatchingPair) -> Self {
        InputDims {
            node: pair.g1.feature_dim(),
            edge: pair.g1.edge_features().map_or(0, |e| e.dim()),
        }
    }
}

/// Any matcher the harness can run.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Embedding(MatchingModel),
    Gmn(GmnModel),
    Spectral(SpectralBaseline),
}

/// Discrete prediction plus Sinkhorn diagnostics when there was a Sinkhorn.
#[derive(Clone, Debug)]
pub struct PairPrediction {
    pub permutation: Permutation,
    pub stats: Option<SinkhornStats>,
}

static EMPTY: std::sync::OnceLock<ParamStore> = std::sync::OnceLock::new();

impl Model {
    pub fn build<R: Rng + ?Sized>(config: &ExperimentConfig, dims: InputDims, rng: &mut R) -> Result<Self> {
        let arch = match config.method {
            Method::Pia => Architecture::Pia,
            Method::Pca => Architecture::Pca,
            Method::PcaIterative { iterations } => Architecture::PcaIterative { iterations },
            Method::Gmn | Method::GmnPl => {
                let mut gc = GmnConfig::new(dims.node, dims.edge);
                gc.power_iters = config.gmn.power_iters;
                gc.tau = config.gmn.tau;
                return Ok(Model::Gmn(GmnModel::new(gc)?));
            }
            Method::SmUnlearned => return Ok(Model::Spectral(config.spectral)),
        };
        let mut mc = ModelConfig::new(arch, dims.node, config.hidden_width);
        mc.tau = config.tau;
        mc.normalize_input = config.normalize_input;
        Ok(Model::Embedding(MatchingModel::new(mc, rng)?))
    }

    /// Learnable parameters; empty for the unlearned baseline.
    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Embedding(m) => m.params(),
            Model::Gmn(m) => m.params(),
            Model::Spectral(_) => EMPTY.get_or_init(ParamStore::new),
        }
    }

    /// `None` for the unlearned baseline.
    pub fn params_mut(&mut self) -> Option<&mut ParamStore> {
        match self {
            Model::Embedding(m) => Some(m.params_mut()),
            Model::Gmn(m) => Some(m.params_mut()),
            Model::Spectral(_) => None,
        }
    }

    pub fn hidden_width(&self) -> Option<usize> {
        match self {
            Model::Embedding(m) => Some(m.config().hidden_width),
            _ => None,
        }
    }

    /// Records a differentiable forward pass; `None` for the unlearned baseline.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        pair: &MatchingPair,
        sinkhorn: &SinkhornConfig,
    ) -> Option<Result<Forward>> {
        match self {
            Model::Embedding(m) => Some(m.forward_with(store, tape, pair, sinkhorn)),
            Model::Gmn(m) => Some(m.forward_with(store, tape, pair, sinkhorn)),
            Model::Spectral(_) => None,
        }
    }

    pub fn predict(&self, pair: &MatchingPair, sinkhorn: &SinkhornConfig) -> Result<PairPrediction> {
        let (permutation, stats) = match self {
            Model::Embedding(m) => {
                let p = m.predict(pair, sinkhorn)?;
                (p.permutation, Some(p.stats))
            }
            Model::Gmn(m) => {
                let p = m.predict(pair, sinkhorn)?;
                (p.permutation, Some(p.stats))
            }
            Model::Spectral(b) => (b.predict(pair)?.0, None),
        };
        Ok(PairPrediction { permutation, stats })
    }
}
