//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! `cargo test --release -p gmatch --test acceptance -- 6` runs only the
//! criteria whose numbers are listed.

use std::process::ExitCode;
use std::time::Instant;

use gmatch::assign::{assignment_score, hungarian, sinkhorn, Permutation, SimilarityMatrix, SinkhornConfig};
use gmatch::baselines::{kronecker_affinity, KernelWidth, SpectralBaseline};
use gmatch::diffcore::{Tape, Tensor};
use gmatch::embed::{Architecture, MatchingModel, ModelConfig};
use gmatch::graphs::{generate_synthetic_pair, SyntheticConfig};
use gmatch::harness::{
    decode, encode, eval_set, evaluate, gradient_suite, run, sweep, Axis, DataSource, ExperimentConfig, LossKind,
    Method, MethodSpec, Model, OptimizerConfig,
};
use gmatch::losses::{offset_blind_spot, offset_loss_value, permutation_loss_value};
use gmatch::par::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

// ----------------------------------------------------------------------------
// 1. gradients

fn gradients() -> Outcome {
    let start = Instant::now();
    let cases = gradient_suite(0).expect("gradient suite runs");
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<_> = cases.iter().filter(|c| !c.report.passed).map(|c| c.name).collect();
    let worst = cases
        .iter()
        .map(|c| (c.report.max_rel_error / c.report.tolerance, c.name, c.report.max_rel_error))
        .fold((0.0, "", 0.0), |a, b| if b.0 > a.0 { b } else { a });
    outcome(
        failed.is_empty() && secs < 60.0,
        format!(
            "{} cases, failed {:?}, worst {} rel err {:.2e}, {:.1}s",
            cases.len(),
            failed,
            worst.1,
            worst.2,
            secs
        ),
    )
}

// ----------------------------------------------------------------------------
// 2. Sinkhorn

fn sinkhorn_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tight = SinkhornConfig {
        max_iters: 50_000,
        tol: 1e-14,
    };
    let (mut worst_sum, mut worst_scale, mut unconverged) = (0.0f64, 0.0f64, 0);
    for _ in 0..1000 {
        let n = rng.random_range(2..=50);
        let m = Tensor::new(vec![n, n], (0..n * n).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap();
        let (s, stats) = sinkhorn(&SimilarityMatrix::from_positive(&m).unwrap(), &SinkhornConfig::EVAL).unwrap();
        if !stats.converged {
            unconverged += 1;
            continue;
        }
        let s = s.to_matrix();
        for i in 0..n {
            let row: f64 = (0..n).map(|j| s.at(i, j)).sum();
            let col: f64 = (0..n).map(|j| s.at(j, i)).sum();
            worst_sum = worst_sum.max((row - 1.0).abs()).max((col - 1.0).abs());
        }

        let d1: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
        let d2: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
        let mut scaled = m.clone();
        for i in 0..n {
            for j in 0..n {
                scaled.set(i, j, d1[i] * m.at(i, j) * d2[j]);
            }
        }
        let (a, _) = sinkhorn(&SimilarityMatrix::from_positive(&m).unwrap(), &tight).unwrap();
        let (b, _) = sinkhorn(&SimilarityMatrix::from_positive(&scaled).unwrap(), &tight).unwrap();
        worst_scale = worst_scale.max(a.to_matrix().max_abs_diff(&b.to_matrix()));
    }
    let two = Tensor::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
    let (s, _) = sinkhorn(&SimilarityMatrix::from_positive(&two).unwrap(), &SinkhornConfig::EVAL).unwrap();
    let expected = Tensor::from_rows(&[[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]]).unwrap();
    let worst_fixed = s.to_matrix().max_abs_diff(&expected);
    outcome(
        unconverged == 0 && worst_sum <= 1e-6 && worst_scale <= 1e-8 && worst_fixed <= 1e-9,
        format!(
            "unconverged {unconverged}/1000, max marginal err {worst_sum:.1e}, max scaling diff {worst_scale:.1e}, \
             2x2 err {worst_fixed:.1e}"
        ),
    )
}

// ----------------------------------------------------------------------------
// 3. Hungarian

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn hungarian_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let all: Vec<Permutation> = permutations(7).into_iter().map(|p| Permutation::new(p).unwrap()).collect();
    let mut mismatches = 0;
    for _ in 0..100 {
        let m = Tensor::new(vec![7, 7], (0..49).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let best = all.iter().map(|p| assignment_score(&m, p)).fold(f64::NEG_INFINITY, f64::max);
        if assignment_score(&m, &hungarian(&m).unwrap()) != best {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches}/100 differ from the 5040-permutation optimum"))
}

// ----------------------------------------------------------------------------
// 4. equivariance

fn equivariance() -> Outcome {
    let data = SyntheticConfig {
        k_pt: 12,
        node_feature_dim: 24,
        edge_feature_dim: 0,
        ..SyntheticConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut broken = Vec::new();
    for arch in [Architecture::Pia, Architecture::Pca, Architecture::PcaIterative { iterations: 3 }] {
        let mut mc = ModelConfig::new(arch, 24, 16);
        mc.tau = 0.05;
        let model = MatchingModel::new(mc, &mut rng).unwrap();
        let mut bad = 0;
        for _ in 0..50 {
            let pair = generate_synthetic_pair(&data, &mut rng).unwrap();
            let (p1, p2) = (Permutation::random(12, &mut rng), Permutation::random(12, &mut rng));
            let s = model.predict(&pair, &SinkhornConfig::EVAL).unwrap().s;
            let t = model.predict(&pair.relabeled(&p1, &p2), &SinkhornConfig::EVAL).unwrap().s;
            let exact = (0..12).all(|i| (0..12).all(|a| t.at(p1.get(i), p2.get(a)).to_bits() == s.at(i, a).to_bits()));
            if !exact {
                bad += 1;
            }
        }
        if bad > 0 {
            broken.push(format!("{}: {bad}/50", arch.name()));
        }
    }
    outcome(
        broken.is_empty(),
        format!("PIA, PCA, PCA-iter(3) x 50 relabelings, bit-exact; non-equivariant: {broken:?}"),
    )
}

// ----------------------------------------------------------------------------
// 5. QAP forms

fn qap_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for t in 0..20 {
        let n = 2 + t % 7;
        // weighted adjacency of an undirected graph: symmetric, zero diagonal
        let mut adjacency = || {
            let mut f = Tensor::zeros(vec![n, n]);
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random_bool(0.6) {
                        let w = rng.random_range(0.0..3.0);
                        f.set(i, j, w);
                        f.set(j, i, w);
                    }
                }
            }
            f
        };
        let (f1, f2) = (adjacency(), adjacency());
        let x = Tensor::new(vec![n, n], (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

        let k = kronecker_affinity(&f1, &f2, None).unwrap();
        let vec_x: Vec<f64> = (0..n * n).map(|r| x.at(r % n, r / n)).collect();
        let lhs: f64 = k.matvec(&vec_x).iter().zip(&vec_x).map(|(a, b)| a * b).sum();

        // tr(Xᵀ F₁ X F₂) = Σ_{i,j,a,b} X_ia F1_ij X_jb F2_ba, spelled out
        let mut rhs = 0.0;
        for i in 0..n {
            for j in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        rhs += x.at(i, a) * f1.at(i, j) * x.at(j, b) * f2.at(b, a);
                    }
                }
            }
        }
        worst = worst.max((lhs - rhs).abs());
    }
    outcome(worst <= 1e-10, format!("20 triples, max |difference| {worst:.1e}"))
}

// ----------------------------------------------------------------------------
// 6. learning signal

/// Training regime used for the learned models; see the README for why it
/// departs from the library defaults.
fn learned(loss: LossKind) -> ExperimentConfig {
    ExperimentConfig {
        method: Method::Pca,
        loss: Some(loss),
        hidden_width: 512,
        tau: 0.05,
        optimizer: Some(OptimizerConfig {
            learning_rate: 3e-4,
            epochs: 200,
            pairs_per_epoch: 30,
            ..OptimizerConfig::default()
        }),
        eval_pairs: 500,
        ..ExperimentConfig::default()
    }
}

fn learning_signal() -> Outcome {
    let start = Instant::now();
    let sm_config = ExperimentConfig {
        method: Method::SmUnlearned,
        eval_pairs: 500,
        ..ExperimentConfig::default()
    };
    let pairs = eval_set(&sm_config).unwrap();
    let sm = evaluate(&Model::Spectral(sm_config.spectral), &pairs, &sm_config.sinkhorn_eval, Execution::Parallel).unwrap();

    let (_, perm) = run(&learned(LossKind::Permutation)).unwrap();
    let (_, offset) = run(&learned(LossKind::Offset)).unwrap();
    assert_eq!(eval_set(&learned(LossKind::Permutation)).unwrap(), pairs, "same eval pairs for every method");
    let secs = start.elapsed().as_secs_f64();

    // Informational: the same baseline with a hand-picked kernel width.
    let tuned = SpectralBaseline {
        width: KernelWidth::MedianScaled(0.1),
        ..SpectralBaseline::default()
    };
    let tuned = evaluate(&Model::Spectral(tuned), &pairs, &sm_config.sinkhorn_eval, Execution::Parallel).unwrap();

    let paired = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64;
    let gain = paired(&perm.eval.accuracies, &sm.accuracies);
    let loss_gap = paired(&perm.eval.accuracies, &offset.eval.accuracies);
    outcome(
        gain >= 0.15 && loss_gap >= -0.02 && secs < 900.0,
        format!(
            "PCA perm {:.3}, PCA offset {:.3}, SM (median width) {:.3}; paired gain over SM {:+.3} (need >= 0.15), \
             perm - offset {:+.3} (need >= -0.02), {:.0}s (need < 900); SM with width factor 0.1 scores {:.3}",
            perm.eval.mean_acc, offset.eval.mean_acc, sm.mean_acc, gain, loss_gap, secs, tuned.mean_acc
        ),
    )
}

// ----------------------------------------------------------------------------
// 7. offset-loss blind spot

fn offset_blind_spot_demo() -> Outcome {
    let (s, ctx, gt) = offset_blind_spot(0.1, 0.3).unwrap();
    let off = offset_loss_value(&s, &ctx, &gt).unwrap();
    let perm = permutation_loss_value(&s, &gt).unwrap();
    outcome(off < 0.1 && perm > 2.0, format!("offset loss {off:.4}, permutation loss {perm:.4}"))
}

// ----------------------------------------------------------------------------
// 8. iterative cross-graph sweep

fn iterative_trend() -> Outcome {
    let base = ExperimentConfig {
        method: Method::PcaIterative { iterations: 1 },
        hidden_width: 256,
        tau: 0.05,
        optimizer: Some(OptimizerConfig {
            learning_rate: 3e-4,
            epochs: 20,
            pairs_per_epoch: 40,
            ..OptimizerConfig::default()
        }),
        eval_pairs: 100,
        ..ExperimentConfig::default()
    };
    let spec = MethodSpec {
        method: base.method,
        loss: None,
    };
    let values: Vec<f64> = (1..=7).map(f64::from).collect();
    let cells = sweep(&base, &[spec], Axis::Iterations, &values).unwrap();
    let failed = cells.iter().filter(|c| c.error.is_some()).count();
    let accs: Vec<f64> = cells.iter().map(|c| c.row.mean_acc).collect();
    let non_increasing = accs.windows(2).all(|w| w[1] <= w[0] + 0.01);
    let trend = if non_increasing {
        "flat or degrading"
    } else {
        "not monotone"
    };
    let listed: Vec<String> = accs.iter().enumerate().map(|(k, a)| format!("K={}:{a:.3}", k + 1)).collect();
    outcome(failed == 0 && accs.iter().all(|a| a.is_finite()), format!("{} ({trend})", listed.join(" ")))
}

// ----------------------------------------------------------------------------
// 9. determinism and persistence

fn determinism() -> Outcome {
    let config = ExperimentConfig {
        method: Method::Pca,
        hidden_width: 32,
        tau: 0.05,
        optimizer: Some(OptimizerConfig {
            learning_rate: 3e-4,
            epochs: 3,
            pairs_per_epoch: 24,
            ..OptimizerConfig::default()
        }),
        eval_pairs: 20,
        data: DataSource::Synthetic(SyntheticConfig {
            node_feature_dim: 64,
            edge_feature_dim: 8,
            ..SyntheticConfig::default()
        }),
        ..ExperimentConfig::default()
    };
    let (ck_a, rec_a) = run(&config).unwrap();
    let (_, rec_b) = run(&config).unwrap();
    let (_, rec_seq) = run(&ExperimentConfig {
        execution: Execution::Sequential,
        ..config.clone()
    })
    .unwrap();
    let same_record = rec_a.same_numbers(&rec_b);
    let same_seq = rec_a.eval == rec_seq.eval && rec_a.epoch_losses == rec_seq.epoch_losses;

    let restored = decode(&encode(&ck_a).unwrap()).unwrap();
    let (Model::Embedding(before), Model::Embedding(after)) = (&ck_a.model, &restored.model) else {
        unreachable!()
    };
    let probes = eval_set(&config).unwrap();
    let bits = |m: &MatchingModel| -> Vec<u64> {
        probes
            .iter()
            .flat_map(|p| {
                let mut tape = Tape::new();
                let f = m.forward(&mut tape, p, &SinkhornConfig::EVAL).unwrap();
                tape.value(f.s).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            })
            .collect()
    };
    let same_outputs = bits(before) == bits(after);
    outcome(
        same_record && same_seq && same_outputs && restored == ck_a,
        format!(
            "repeat run identical: {same_record}, sequential run identical: {same_seq}, \
             restored checkpoint outputs identical on {} probe pairs: {same_outputs}",
            probes.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "gradient suite", gradients),
        (2, "sinkhorn suite", sinkhorn_suite),
        (3, "hungarian oracle", hungarian_oracle),
        (4, "equivariance", equivariance),
        (5, "QAP identity", qap_identity),
        (6, "learning signal", learning_signal),
        (7, "offset-loss blind spot", offset_blind_spot_demo),
        (8, "iterative PCA sweep", iterative_trend),
        (9, "determinism and persistence", determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut all_passed = true;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        all_passed &= o.passed;
        println!(
            "{} criterion {id} ({name}): {} [{:.1}s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
