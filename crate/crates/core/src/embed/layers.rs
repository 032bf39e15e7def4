use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::diffcore::{DiffError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// Glorot-uniform matrix, `U(-a, a)` with `a = sqrt(6 / (d_in + d_out))`.
pub fn glorot<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (d_in + d_out) as f64).sqrt();
    let u = Uniform::new_inclusive(-a, a).expect("finite bound");
    let data = (0..d_in * d_out).map(|_| u.sample(rng)).collect();
    Tensor::new(vec![d_in, d_out], data).expect("shape")
}

/// `x W + b` with `b` broadcast over rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(d_in, d_out, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![1, d_out]));
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

/// Intra-graph convolution: mean of rectified neighbour messages plus a
/// rectified self transform. No activation after the sum.
#[derive(Clone, Debug, PartialEq)]
pub struct GConvLayer {
    pub msg: Linear,
    pub node: Linear,
}

impl GConvLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        GConvLayer {
            msg: Linear::new(store, &format!("{name}.msg"), d_in, d_out, rng),
            node: Linear::new(store, &format!("{name}.node"), d_in, d_out, rng),
        }
    }

    pub fn d_in(&self) -> usize {
        self.msg.d_in
    }

    pub fn d_out(&self) -> usize {
        self.msg.d_out
    }

    /// `aggregator` is the row-normalised adjacency `D⁻¹A` (zero rows for
    /// isolated nodes).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, aggregator: Var, h: Var) -> Result<Var, DiffError> {
        let msg = self.msg.forward(tape, store, h)?;
        let msg = tape.relu(msg)?;
        let m = tape.aggregate(aggregator, msg)?;
        let n = self.node.forward(tape, store, h)?;
        let n = tape.relu(n)?;
        tape.add(m, n)
    }
}

/// Cross-graph convolution: each node concatenates its own feature with the
/// `S`-weighted sum of the other graph's features, then one affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossConvLayer {
    pub fc: Linear,
}

impl CrossConvLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        CrossConvLayer {
            fc: Linear::new(store, &format!("{name}.fc"), 2 * d, d, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.fc.d_out
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        s_hat: Var,
        h1: Var,
        h2: Var,
    ) -> Result<(Var, Var), DiffError> {
        let s_t = tape.transpose(s_hat)?;
        let m1 = tape.aggregate(s_hat, h2)?;
        let m2 = tape.aggregate(s_t, h1)?;
        let c1 = tape.concat(&[h1, m1])?;
        let c2 = tape.concat(&[h2, m2])?;
        Ok((self.fc.forward(tape, store, c1)?, self.fc.forward(tape, store, c2)?))
    }
}

/// Bilinear affinity `exp(h1ᵀ A h2 / τ)`, handled in the log domain.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMetric {
    pub a: ParamId,
    pub tau: f64,
    pub dim: usize,
}

impl AffinityMetric {
    /// `A` starts at the identity plus `N(0, 0.01²)` noise.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, tau: f64, rng: &mut R) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive and finite, got {tau}")));
        }
        let noise = Normal::new(0.0, 0.01).expect("valid std");
        let mut a = Tensor::identity(dim);
        for v in a.data_mut() {
            *v += noise.sample(rng);
        }
        Ok(AffinityMetric {
            a: store.add(format!("{name}.A"), a),
            tau,
            dim,
        })
    }

    /// `log M = H1 A H2ᵀ / τ`.
    pub fn log_scores(&self, tape: &mut Tape, store: &ParamStore, h1: Var, h2: Var) -> Result<Var, DiffError> {
        let a = tape.param(store, self.a);
        let h1a = tape.matmul(h1, a)?;
        let h2t = tape.transpose(h2)?;
        let raw = tape.matmul(h1a, h2t)?;
        tape.scale(raw, 1.0 / self.tau)
    }
}

/// Largest exponent `exp` can take without overflowing to infinity.
pub const MAX_EXPONENT: f64 = 709.782712893384;

/// Materialises `M = exp(log_scores)`, refusing to overflow.
pub fn affinity_matrix(log_scores: &Tensor) -> Result<Tensor> {
    let max = log_scores.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > MAX_EXPONENT || max.is_nan() {
        return Err(Error::AffinityOverflow { max_exponent: max });
    }
    Ok(log_scores.map(f64::exp))
}
