//! Thread-pool versus sequential execution on the two hot loops: batch
//! evaluation and one training epoch.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gmatch::graphs::SyntheticConfig;
use gmatch::harness::{eval_set, evaluate, train, DataSource, ExperimentConfig, Method, OptimizerConfig};
use gmatch::par::Execution;

fn config(execution: Execution) -> ExperimentConfig {
    ExperimentConfig {
        method: Method::Pca,
        hidden_width: 64,
        tau: 0.05,
        eval_pairs: 32,
        data: DataSource::Synthetic(SyntheticConfig {
            node_feature_dim: 128,
            edge_feature_dim: 0,
            ..SyntheticConfig::default()
        }),
        optimizer: Some(OptimizerConfig {
            learning_rate: 3e-4,
            epochs: 1,
            pairs_per_epoch: 32,
            ..OptimizerConfig::default()
        }),
        execution,
        ..ExperimentConfig::default()
    }
}

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn bench_evaluate(c: &mut Criterion) {
    let base = config(Execution::Parallel);
    let model = train(&base).unwrap().checkpoint.model;
    let pairs = eval_set(&base).unwrap();
    let mut group = c.benchmark_group("evaluate_32_pairs");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate(&model, &pairs, &base.sinkhorn_eval, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_train_epoch(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_epoch_32_pairs");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = config(exec);
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| train(&cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_evaluate, bench_train_epoch);
criterion_main!(benches);
