//! Property tests and brute-force oracles for the assignment, topology and
//! classical-baseline layers.

use gmatch::assign::{assignment_score, hungarian, sinkhorn, Permutation, SimilarityMatrix, SinkhornConfig};
use gmatch::baselines::{
    build_affinity_k, kronecker_affinity, qap_objective, spectral_matching, KernelWidth, PairwiseAffinity,
    SpectralConfig,
};
use gmatch::diffcore::{canonical_sum, Tensor};
use gmatch::graphs::{
    delaunay_adjacency, generate_synthetic_instance, generate_synthetic_pair, MatchingPair, SyntheticConfig,
};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force_assignment(m: &Tensor) -> f64 {
    all_permutations(m.rows())
        .into_iter()
        .map(|p| (0..p.len()).map(|i| m.at(i, p[i])).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn matrix(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, n * n).prop_map(move |d| Tensor::new(vec![n, n], d).unwrap())
}

fn sized_matrix(max_n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    (2..=max_n).prop_flat_map(move |n| matrix(n, lo, hi))
}

const TIGHT: SinkhornConfig = SinkhornConfig {
    max_iters: 20_000,
    tol: 1e-14,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sinkhorn_ignores_diagonal_scaling(
        m in sized_matrix(8, 0.1, 3.0),
        seed in any::<u64>(),
    ) {
        let n = m.rows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d1: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..5.0)).collect();
        let d2: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..5.0)).collect();
        let mut scaled = m.clone();
        for i in 0..n {
            for j in 0..n {
                scaled.set(i, j, d1[i] * m.at(i, j) * d2[j]);
            }
        }
        let (a, _) = sinkhorn(&SimilarityMatrix::from_positive(&m).unwrap(), &TIGHT).unwrap();
        let (b, _) = sinkhorn(&SimilarityMatrix::from_positive(&scaled).unwrap(), &TIGHT).unwrap();
        prop_assert!(a.to_matrix().max_abs_diff(&b.to_matrix()) < 1e-8);
    }

    #[test]
    fn hungarian_matches_exhaustive_search(m in sized_matrix(6, -10.0, 10.0)) {
        let p = hungarian(&m).unwrap();
        let best = brute_force_assignment(&m);
        prop_assert!((assignment_score(&m, &p) - best).abs() <= 1e-9 * best.abs().max(1.0));
    }

    #[test]
    fn hungarian_ignores_row_and_column_shifts(
        m in sized_matrix(7, 0.0, 1.0),
        seed in any::<u64>(),
    ) {
        let n = m.rows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut shifted = m.clone();
        for i in 0..n {
            for j in 0..n {
                shifted.set(i, j, m.at(i, j) + r[i] + c[j]);
            }
        }
        // Shifts change every permutation's score by the same constant.
        let p = hungarian(&m).unwrap();
        let q = hungarian(&shifted).unwrap();
        prop_assert!((assignment_score(&m, &p) - assignment_score(&m, &q)).abs() < 1e-9);
    }

    #[test]
    fn canonical_sum_is_order_independent(
        mut v in prop::collection::vec(-1e6f64..1e6, 0..64),
        seed in any::<u64>(),
    ) {
        let a = canonical_sum(&v);
        v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a.to_bits(), canonical_sum(&v).to_bits());
    }

    #[test]
    fn kronecker_trace_identity(n in 1usize..=5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f1, f2, x) = random_triple(n, &mut rng);
        prop_assert!((quadratic_form(&f1, &f2, &x) - trace_form(&f1, &f2, &x)).abs() < 1e-10);
    }
}

/// Symmetric nonnegative `F1`, `F2` and an arbitrary real `X`.
pub fn random_triple(n: usize, rng: &mut ChaCha8Rng) -> (Tensor, Tensor, Tensor) {
    let mut sym = || {
        let mut f = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            for j in i..n {
                let v = rng.random_range(0.0..2.0);
                f.set(i, j, v);
                f.set(j, i, v);
            }
        }
        f
    };
    let (f1, f2) = (sym(), sym());
    let x = Tensor::new(vec![n, n], (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    (f1, f2, x)
}

/// `vec(X)ᵀ (F₂ ⊗ F₁) vec(X)` through the library's sparse Kronecker product.
pub fn quadratic_form(f1: &Tensor, f2: &Tensor, x: &Tensor) -> f64 {
    let n = x.rows();
    let k = kronecker_affinity(f1, f2, None).unwrap();
    let vec_x: Vec<f64> = (0..n * n).map(|r| x.at(r % n, r / n)).collect();
    k.matvec(&vec_x).iter().zip(&vec_x).map(|(a, b)| a * b).sum()
}

/// `tr(Xᵀ F₁ X F₂)` by plain dense products.
pub fn trace_form(f1: &Tensor, f2: &Tensor, x: &Tensor) -> f64 {
    let a = DMatrix::from_row_slice(x.rows(), x.cols(), x.data());
    let f1 = DMatrix::from_row_slice(f1.rows(), f1.cols(), f1.data());
    let f2 = DMatrix::from_row_slice(f2.rows(), f2.cols(), f2.data());
    (a.transpose() * f1 * &a * f2).trace()
}

// ----------------------------------------------------------------------------
// Delaunay

fn in_circumcircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (ax, ay) = (a[0] - d[0], a[1] - d[1]);
    let (bx, by) = (b[0] - d[0], b[1] - d[1]);
    let (cx, cy) = (c[0] - d[0], c[1] - d[1]);
    let det = (ax * ax + ay * ay) * (bx * cy - cx * by) - (bx * bx + by * by) * (ax * cy - cx * ay)
        + (cx * cx + cy * cy) * (ax * by - bx * ay);
    let orient = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    if orient > 0.0 {
        det > 0.0
    } else {
        det < 0.0
    }
}

/// Edges of every triangle whose circumcircle holds no other point.
fn brute_force_delaunay(p: &[[f64; 2]]) -> Vec<(usize, usize)> {
    let n = p.len();
    let mut edges = std::collections::BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let orient = (p[j][0] - p[i][0]) * (p[k][1] - p[i][1]) - (p[j][1] - p[i][1]) * (p[k][0] - p[i][0]);
                if orient == 0.0 {
                    continue;
                }
                if (0..n).filter(|&m| m != i && m != j && m != k).all(|m| !in_circumcircle(p[i], p[j], p[k], p[m])) {
                    edges.extend([(i, j), (i, k), (j, k)]);
                }
            }
        }
    }
    edges.into_iter().collect()
}

#[test]
fn delaunay_matches_empty_circumcircle_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..60 {
        let n = 3 + trial % 28;
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(0.0..256.0), rng.random_range(0.0..256.0)])
            .collect();
        let adj = delaunay_adjacency(&pts).unwrap();
        assert_eq!(adj.edges(), brute_force_delaunay(&pts), "trial {trial}, n = {n}");
    }
}

#[test]
fn delaunay_unit_square_has_one_diagonal() {
    let adj = delaunay_adjacency(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
    assert_eq!(adj.num_edges(), 5);
    for (i, j) in [(0, 1), (1, 2), (2, 3), (0, 3)] {
        assert!(adj.contains(i, j));
    }
    assert!(adj.contains(0, 2) ^ adj.contains(1, 3));
}

// ----------------------------------------------------------------------------
// Generator

#[test]
fn generator_noise_has_the_configured_spread() {
    let cfg = SyntheticConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = cfg.node_feature_dim;
    let (mut sum, mut sq) = (vec![0.0; d], vec![0.0; d]);
    let mut count = 0.0;
    for _ in 0..1000 {
        let inst = generate_synthetic_instance(&cfg, &mut rng).unwrap();
        // g1 keeps latent order
        let (f, latent) = (inst.pair.g1.node_features(), &inst.latent.node_features);
        for i in 0..cfg.k_pt {
            for c in 0..d {
                let e = f.at(i, c) - latent.at(i, c);
                sum[c] += e;
                sq[c] += e * e;
            }
        }
        count += cfg.k_pt as f64;
    }
    for c in 0..d {
        let mean = sum[c] / count;
        let std = (sq[c] / count - mean * mean).sqrt();
        assert!((std - 1.5).abs() <= 0.05 * 1.5, "coordinate {c}: std {std}");
    }
}

// ----------------------------------------------------------------------------
// Classical baselines

fn small_pair(n: usize, seed: u64, sigma_feat: f64) -> MatchingPair {
    let cfg = SyntheticConfig {
        k_pt: n,
        node_feature_dim: 6,
        edge_feature_dim: 4,
        sigma_feat,
        ..SyntheticConfig::default()
    };
    generate_synthetic_pair(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Dense `N² × N²` construction straight from the definition.
fn dense_affinity(pair: &MatchingPair, sigma: f64) -> Vec<Vec<f64>> {
    let n = pair.n();
    let kernel = |x: &[f64], y: &[f64]| {
        let d: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d / (sigma * sigma)).exp()
    };
    let (e1, e2) = (pair.g1.edge_features().unwrap(), pair.g2.edge_features().unwrap());
    let mut k = vec![vec![0.0; n * n]; n * n];
    for i in 0..n {
        for a in 0..n {
            for j in 0..n {
                for b in 0..n {
                    let (r, c) = (i + a * n, j + b * n);
                    if i == j && a == b {
                        k[r][c] = kernel(pair.g1.node_features().row(i), pair.g2.node_features().row(a));
                    } else if let (Some(f), Some(g)) = (e1.get(i, j), e2.get(a, b)) {
                        k[r][c] = kernel(f, g);
                    }
                }
            }
        }
    }
    k
}

#[test]
fn affinity_matches_dense_definition() {
    for seed in 0..10 {
        let pair = small_pair(4 + seed as usize % 3, seed, 0.7);
        let sigma = 1.0 + seed as f64 * 0.3;
        let k = build_affinity_k(&pair, sigma).unwrap();
        let dense = dense_affinity(&pair, sigma);
        for (r, row) in dense.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert!((k.get(r, c) - v).abs() < 1e-15, "seed {seed} entry ({r},{c})");
            }
        }
        assert!(k.is_symmetric());
        assert!(k.entries().all(|(_, _, v)| v > 0.0 && v <= 1.0));
    }
}

#[test]
fn identical_pair_affinity_is_one_on_matched_edges() {
    let cfg = SyntheticConfig {
        node_feature_dim: 3,
        edge_feature_dim: 2,
        ..SyntheticConfig::noiseless(5)
    };
    let pair = generate_synthetic_pair(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let k = build_affinity_k(&pair, 1.0).unwrap();
    let n = pair.n();
    for (i, j) in pair.g1.adjacency().edges() {
        assert_eq!(k.get(i + i * n, j + j * n), 1.0);
    }
    for i in 0..n {
        assert_eq!(k.get(i + i * n, i + i * n), 1.0);
    }
}

fn random_symmetric(n2: usize, rng: &mut ChaCha8Rng) -> PairwiseAffinity {
    let n = (n2 as f64).sqrt() as usize;
    let mut t = Vec::new();
    for r in 0..n2 {
        for c in r..n2 {
            let v = rng.random_range(0.0..1.0);
            t.push((r, c, v));
            if r != c {
                t.push((c, r, v));
            }
        }
    }
    PairwiseAffinity::from_triplets(n, t).unwrap()
}

#[test]
fn spectral_matches_dense_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let k = random_symmetric(9, &mut rng);
        let res = spectral_matching(&k, &SpectralConfig::default()).unwrap();
        assert!(res.converged);
        let d = k.to_dense();
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(9, 9, d.data()));
        let top = (0..9).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap();
        let mut v: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
        if v.iter().sum::<f64>() < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for r in 0..9 {
            let got = res.assignment.at(r % 3, r / 3);
            assert!((got - v[r]).abs() < 1e-6, "entry {r}: {got} vs {}", v[r]);
        }
        assert!((res.objective - eig.eigenvalues[top]).abs() < 1e-9);
    }
}

#[test]
fn spectral_selection_ignores_positive_scaling() {
    for seed in 0..10 {
        let pair = small_pair(6, seed, 1.0);
        let k = build_affinity_k(&pair, KernelWidth::MedianScaled(1.0).sigma(&pair)).unwrap();
        let scaled = PairwiseAffinity::from_triplets(k.n(), k.entries().map(|(r, c, v)| (r, c, 37.5 * v))).unwrap();
        let a = spectral_matching(&k, &SpectralConfig::default()).unwrap();
        let b = spectral_matching(&scaled, &SpectralConfig::default()).unwrap();
        assert_eq!(hungarian(&a.assignment).unwrap(), hungarian(&b.assignment).unwrap());
    }
}

fn brute_force_qap(k: &PairwiseAffinity) -> f64 {
    all_permutations(k.n())
        .into_iter()
        .map(|p| qap_objective(k, &Permutation::new(p).unwrap()).unwrap())
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn identity_is_optimal_for_identical_graphs() {
    for seed in 0..5 {
        let cfg = SyntheticConfig {
            node_feature_dim: 4,
            edge_feature_dim: 3,
            ..SyntheticConfig::noiseless(6)
        };
        let pair = generate_synthetic_pair(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let k = build_affinity_k(&pair, 1.0).unwrap();
        let id = qap_objective(&k, &Permutation::identity(6)).unwrap();
        assert!(id >= brute_force_qap(&k) - 1e-12, "seed {seed}");
    }
}

#[test]
fn qap_objective_is_relabeling_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..10 {
        let pair = small_pair(5, seed, 1.0);
        let x = Permutation::random(5, &mut rng);
        let (p1, p2) = (Permutation::random(5, &mut rng), Permutation::random(5, &mut rng));
        let k = build_affinity_k(&pair, 2.0).unwrap();
        let moved = pair.relabeled(&p1, &p2);
        let k2 = build_affinity_k(&moved, 2.0).unwrap();
        let x2 = p2.compose(&x).compose(&p1.inverse());
        let (a, b) = (qap_objective(&k, &x).unwrap(), qap_objective(&k2, &x2).unwrap());
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }
}

/// Regression bound: spectral matching plus Hungarian reaches 80% of the
/// exhaustive QAP optimum on at least 90 of 100 seeded small instances drawn
/// from the default generator.
#[test]
fn spectral_solutions_are_near_optimal() {
    let mut good = 0;
    for seed in 0..100 {
        let cfg = SyntheticConfig {
            k_pt: 4 + seed as usize % 3,
            ..SyntheticConfig::default()
        };
        let pair = generate_synthetic_pair(&cfg, &mut ChaCha8Rng::seed_from_u64(1000 + seed)).unwrap();
        let k = build_affinity_k(&pair, KernelWidth::MedianScaled(1.0).sigma(&pair)).unwrap();
        let res = spectral_matching(&k, &SpectralConfig::default()).unwrap();
        let got = qap_objective(&k, &hungarian(&res.assignment).unwrap()).unwrap();
        if got >= 0.8 * brute_force_qap(&k) {
            good += 1;
        }
    }
    assert!(good >= 90, "{good}/100 instances within 80% of optimum");
}
