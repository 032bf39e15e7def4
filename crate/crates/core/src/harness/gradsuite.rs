//! Finite-difference checks of every differentiable building block on small
//! seeded instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::assign::{sinkhorn_tape, Permutation, SinkhornConfig};
use crate::baselines::{GmnConfig, GmnModel};
use crate::diffcore::{finite_diff_check, GradCheckConfig, GradCheckReport, ParamStore, Tape, Tensor, Var};
use crate::embed::{AffinityMetric, Architecture, CrossConvLayer, GConvLayer, MatchingModel, ModelConfig};
use crate::graphs::{generate_synthetic_pair, Adjacency, MatchingPair, SyntheticConfig};
use crate::losses::{offset_loss, permutation_loss, OffsetContext};
use crate::Result;

pub const TOLERANCE: f64 = 1e-4;
/// The unrolled power iteration is less well conditioned.
pub const GMN_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape")
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let u = Uniform::new(lo, hi).expect("range");
    let data = (0..rows * cols).map(|_| u.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape")
}

/// `Σ R ⊙ x` for a fixed random `R`, turning any tensor output into a scalar
/// whose gradient exercises every entry.
fn probe(tape: &mut Tape, x: Var, r: &Tensor) -> Result<Var> {
    let r = tape.constant(r.clone());
    let p = tape.mul(x, r)?;
    Ok(tape.sum(p)?)
}

fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> Adjacency {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.5) {
                edges.push((i, j));
            }
        }
    }
    Adjacency::from_edges(n, &edges).expect("valid edges")
}

fn small_pair(n: usize, rng: &mut ChaCha8Rng) -> Result<MatchingPair> {
    let cfg = SyntheticConfig {
        k_pt: n,
        node_feature_dim: 4,
        edge_feature_dim: 3,
        sigma_feat: 0.5,
        ..SyntheticConfig::default()
    };
    generate_synthetic_pair(&cfg, rng)
}

/// Runs the whole suite. Exact-iteration Sinkhorn is used throughout so an
/// early stop cannot switch on or off between the perturbed evaluations.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCheckCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GradCheckConfig::default();
    let sk = SinkhornConfig::fixed(20);
    let mut cases = Vec::new();
    let mut push = |name, report| cases.push(GradCheckCase { name, report });

    {
        let n = 5;
        let mut store = ParamStore::new();
        let layer = GConvLayer::new(&mut store, "gconv", 3, 4, &mut rng);
        let x = store.add("x", normal(n, 3, &mut rng));
        let agg = random_graph(n, &mut rng).mean_aggregator();
        let r = normal(n, 4, &mut rng);
        let f = |tape: &mut Tape, s: &ParamStore| -> Result<Var> {
            let a = tape.constant(agg.clone());
            let h = tape.param(s, x);
            let out = layer.forward(tape, s, a, h)?;
            probe(tape, out, &r)
        };
        push("gconv", finite_diff_check(f, &mut store, &cfg)?);
    }
    {
        let n = 4;
        let mut store = ParamStore::new();
        let layer = CrossConvLayer::new(&mut store, "cross", 3, &mut rng);
        let h1 = store.add("h1", normal(n, 3, &mut rng));
        let h2 = store.add("h2", normal(n, 3, &mut rng));
        let s_hat = store.add("s_hat", uniform(n, n, 0.0, 0.5, &mut rng));
        let (r1, r2) = (normal(n, 3, &mut rng), normal(n, 3, &mut rng));
        let f = |tape: &mut Tape, s: &ParamStore| -> Result<Var> {
            let (a, b, m) = (tape.param(s, h1), tape.param(s, h2), tape.param(s, s_hat));
            let (o1, o2) = layer.forward(tape, s, m, a, b)?;
            let p1 = probe(tape, o1, &r1)?;
            let p2 = probe(tape, o2, &r2)?;
            Ok(tape.add(p1, p2)?)
        };
        push("cross_conv", finite_diff_check(f, &mut store, &cfg)?);
    }
    {
        let n = 5;
        let mut store = ParamStore::new();
        let metric = AffinityMetric::new(&mut store, "affinity", 3, 0.5, &mut rng)?;
        let h1 = store.add("h1", normal(n, 3, &mut rng));
        let h2 = store.add("h2", normal(n, 3, &mut rng));
        let r = normal(n, n, &mut rng);
        let f = |tape: &mut Tape, s: &ParamStore| -> Result<Var> {
            let (a, b) = (tape.param(s, h1), tape.param(s, h2));
            let l = metric.log_scores(tape, s, a, b)?;
            probe(tape, l, &r)
        };
        push("affinity", finite_diff_check(f, &mut store, &cfg)?);
    }
    {
        let n = 5;
        let mut store = ParamStore::new();
        let scores = store.add("log_scores", normal(n, n, &mut rng));
        let r = normal(n, n, &mut rng);
        let f = |tape: &mut Tape, s: &ParamStore| -> Result<Var> {
            let l = tape.param(s, scores);
            let (log_s, _) = sinkhorn_tape(tape, l, &sk)?;
            let out = tape.exp(log_s)?;
            probe(tape, out, &r)
        };
        push("sinkhorn", finite_diff_check(f, &mut store, &cfg)?);
    }
    {
        let n = 4;
        let gt = Permutation::random(n, &mut rng);
        let mut store = ParamStore::new();
        let s_id = store.add("s", uniform(n, n, 0.05, 0.95, &mut rng));
        let f = |tape: &mut Tape, s: &ParamStore| -> Result<Var> {
            let v = tape.param(s, s_id);
            permutation_loss(tape, v, &gt)
        };
        push("permutation_loss", finite_diff_check(f, &mut store, &cfg)?);

        let ctx = OffsetContext::new(uniform(n, 2, 0.0, 10.0, &mut rng), uniform(n, 2, 0.0, 10.0, &mut rng), 1e-8)?;
        let f = |tape: &mut Tape, s: &ParamStore| -> Result<Var> {
            let v = tape.param(s, s_id);
            offset_loss(tape, v, &ctx, &gt)
        };
        push("offset_loss", finite_diff_check(f, &mut store, &cfg)?);
    }
    for (name, arch) in [
        ("pia_forward", Architecture::Pia),
        ("pca_forward", Architecture::Pca),
        ("pca_iterative_forward", Architecture::PcaIterative { iterations: 2 }),
    ] {
        let pair = small_pair(5, &mut rng)?;
        let mut mc = ModelConfig::new(arch, 4, 6);
        mc.tau = 0.5;
        let model = MatchingModel::new(mc, &mut rng)?;
        let mut store = model.params().clone();
        let f = |tape: &mut Tape, s: &ParamStore| -> Result<Var> {
            let out = model.forward_with(s, tape, &pair, &sk)?;
            permutation_loss(tape, out.s, &pair.gt)
        };
        push(name, finite_diff_check(f, &mut store, &cfg)?);
    }
    {
        let pair = small_pair(4, &mut rng)?;
        let mut gc = GmnConfig::new(4, 3);
        gc.tau = 0.05;
        let model = GmnModel::new(gc)?;
        let mut store = model.params().clone();
        let gmn_cfg = GradCheckConfig {
            tolerance: GMN_TOLERANCE,
            ..cfg.clone()
        };
        let f = |tape: &mut Tape, s: &ParamStore| -> Result<Var> {
            let out = model.forward_with(s, tape, &pair, &sk)?;
            permutation_loss(tape, out.s, &pair.gt)
        };
        push("gmn_forward", finite_diff_check(f, &mut store, &gmn_cfg)?);
    }
    Ok(cases)
}
