//! Synthetic matching pairs: one random latent graph, two independently
//! disturbed copies, the second shuffled.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{delaunay_adjacency, EdgeFeatures, KeypointGraph, MatchingPair};
use crate::assign::Permutation;
use crate::diffcore::Tensor;
use crate::{Error, Result};

const COORD_RANGE: f64 = 256.0;
const MAX_RETRIES: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Number of keypoints per graph.
    pub k_pt: usize,
    /// Standard deviation of the Gaussian noise added to every feature.
    pub sigma_feat: f64,
    /// Standard deviation of the Gaussian noise added to coordinates.
    pub sigma_coo: f64,
    pub node_feature_dim: usize,
    /// Zero disables edge features.
    pub edge_feature_dim: usize,
    /// Rotation range in degrees, applied about the image centre.
    pub rotation_deg: [f64; 2],
    pub scale: [f64; 2],
    /// Per-axis translation range.
    pub translation: [f64; 2],
    /// Shuffle the node order of the second graph.
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            k_pt: 20,
            sigma_feat: 1.5,
            sigma_coo: 10.0,
            node_feature_dim: 512,
            edge_feature_dim: 512,
            rotation_deg: [-30.0, 30.0],
            scale: [0.8, 1.25],
            translation: [-20.0, 20.0],
            shuffle: true,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// No noise, no transform, no shuffle: both graphs equal the latent graph.
    pub fn noiseless(k_pt: usize) -> Self {
        SyntheticConfig {
            k_pt,
            sigma_feat: 0.0,
            sigma_coo: 0.0,
            rotation_deg: [0.0, 0.0],
            scale: [1.0, 1.0],
            translation: [0.0, 0.0],
            shuffle: false,
            ..SyntheticConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_pt < 3 {
            return Err(Error::Config(format!("k_pt must be at least 3, got {}", self.k_pt)));
        }
        for (name, v) in [("sigma_feat", self.sigma_feat), ("sigma_coo", self.sigma_coo)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.node_feature_dim == 0 {
            return Err(Error::Config("node_feature_dim must be positive".into()));
        }
        for (name, r) in [
            ("rotation_deg", self.rotation_deg),
            ("scale", self.scale),
            ("translation", self.translation),
        ] {
            if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(Error::Config(format!("{name} range {r:?} is not ordered and finite")));
            }
        }
        if self.scale[0] <= 0.0 {
            return Err(Error::Config("scale range must be positive".into()));
        }
        Ok(())
    }
}

/// Similarity transform about the centre of the coordinate frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub rotation_rad: f64,
    pub scale: f64,
    pub translation: [f64; 2],
}

impl AffineTransform {
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let c = COORD_RANGE / 2.0;
        let (s, co) = self.rotation_rad.sin_cos();
        let (x, y) = (p[0] - c, p[1] - c);
        [
            self.scale * (co * x - s * y) + c + self.translation[0],
            self.scale * (s * x + co * y) + c + self.translation[1],
        ]
    }

    fn sample<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Self {
        let deg = uniform(rng, cfg.rotation_deg);
        AffineTransform {
            rotation_rad: deg.to_radians(),
            scale: uniform(rng, cfg.scale),
            translation: [uniform(rng, cfg.translation), uniform(rng, cfg.translation)],
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        // still consume a draw so the stream layout does not depend on the range
        let _: f64 = rng.random();
        return range[0];
    }
    Uniform::new(range[0], range[1]).expect("validated range").sample(rng)
}

/// The undisturbed graph both sides of a pair are drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGraph {
    pub coords: Vec<[f64; 2]>,
    pub node_features: Tensor,
    /// One row per unordered node pair `(i, j)`, `i < j`, lexicographic.
    pub pair_features: Option<Tensor>,
}

impl LatentGraph {
    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = (i.min(j), i.max(j));
        let n = self.n();
        i * n - i * (i + 1) / 2 + (j - i - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticInstance {
    pub latent: LatentGraph,
    pub pair: MatchingPair,
}

fn sample_latent<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> LatentGraph {
    let n = cfg.k_pt;
    let coord = Uniform::new(0.0, COORD_RANGE).expect("range");
    let feat = Uniform::new(-1.0, 1.0).expect("range");
    let coords = (0..n).map(|_| [coord.sample(rng), coord.sample(rng)]).collect();
    let node_data = (0..n * cfg.node_feature_dim).map(|_| feat.sample(rng)).collect();
    let node_features = Tensor::new(vec![n, cfg.node_feature_dim], node_data).expect("shape");
    let pair_features = (cfg.edge_feature_dim > 0).then(|| {
        let pairs = n * (n - 1) / 2;
        let data = (0..pairs * cfg.edge_feature_dim).map(|_| feat.sample(rng)).collect();
        Tensor::new(vec![pairs, cfg.edge_feature_dim], data).expect("shape")
    });
    LatentGraph {
        coords,
        node_features,
        pair_features,
    }
}

fn add_noise<R: Rng + ?Sized>(values: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            v + sigma * z
        })
        .collect()
}

/// One disturbed copy of `latent`; latent node `i` lands at position `order(i)`.
fn disturb<R: Rng + ?Sized>(
    latent: &LatentGraph,
    cfg: &SyntheticConfig,
    order: &Permutation,
    rng: &mut R,
) -> Result<KeypointGraph> {
    let n = latent.n();
    let inv = order.inverse();
    let mut last_err = None;
    for _ in 0..MAX_RETRIES {
        let affine = AffineTransform::sample(cfg, rng);
        let moved: Vec<[f64; 2]> = latent.coords.iter().map(|&p| affine.apply(p)).collect();
        let flat: Vec<f64> = moved.iter().flat_map(|p| p.iter().copied()).collect();
        let noisy = add_noise(&flat, cfg.sigma_coo, rng);
        let feats = add_noise(latent.node_features.data(), cfg.sigma_feat, rng);
        let feats = Tensor::new(latent.node_features.shape().to_vec(), feats).expect("shape");

        let coords: Vec<[f64; 2]> = (0..n)
            .map(|k| {
                let i = inv.get(k);
                [noisy[2 * i], noisy[2 * i + 1]]
            })
            .collect();
        let node_features = feats.select_rows(inv.as_slice());
        let adjacency = match delaunay_adjacency(&coords) {
            Ok(a) => a,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let edge_features = match &latent.pair_features {
            None => None,
            Some(pf) => {
                let edges = adjacency.edges();
                let rows: Vec<usize> = edges
                    .iter()
                    .map(|&(a, b)| latent.pair_index(inv.get(a), inv.get(b)))
                    .collect();
                let clean = pf.select_rows(&rows);
                let noisy = add_noise(clean.data(), cfg.sigma_feat, rng);
                let t = Tensor::new(clean.shape().to_vec(), noisy).expect("shape");
                Some(EdgeFeatures::new(edges, t)?)
            }
        };
        return KeypointGraph::new(coords, node_features, adjacency, edge_features);
    }
    Err(last_err.unwrap_or_else(|| Error::DegeneratePoints("retries exhausted".into())))
}

/// Draws a latent graph and two disturbed copies of it.
pub fn generate_synthetic_instance<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Result<SyntheticInstance> {
    cfg.validate()?;
    let latent = sample_latent(cfg, rng);
    let n = cfg.k_pt;
    let g1 = disturb(&latent, cfg, &Permutation::identity(n), rng)?;
    let gt = if cfg.shuffle {
        Permutation::random(n, rng)
    } else {
        Permutation::identity(n)
    };
    let g2 = disturb(&latent, cfg, &gt, rng)?;
    let pair = MatchingPair::new(g1, g2, gt)?;
    Ok(SyntheticInstance { latent, pair })
}

pub fn generate_synthetic_pair<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Result<MatchingPair> {
    generate_synthetic_instance(cfg, rng).map(|i| i.pair)
}
