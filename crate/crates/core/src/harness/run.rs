use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, LossKind};
use super::model::{InputDims, Model};
use crate::assign::SinkhornConfig;
use crate::diffcore::{DiffError, Gradients, ParamStore, Tape, Tensor};
use crate::graphs::{generate_synthetic_pair, load_pairs, MatchingPair};
use crate::losses::{matching_accuracy, offset_loss, permutation_loss, OffsetContext};
use crate::par::{self, Execution};
use crate::{Error, Result};

/// Tag embedded in every record and checkpoint.
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

const PHASE_INIT: u64 = 1;
const PHASE_TRAIN: u64 = 2;
const PHASE_EVAL: u64 = 3;
const PHASE_SHUFFLE: u64 = 4;
const PHASE_GENERATE: u64 = 5;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, phase, a, b)`, so any pair can be
/// regenerated without replaying the ones before it.
pub fn derive_seed(seed: u64, phase: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(splitmix(seed) ^ phase) ^ a) ^ b)
}

fn stream(seed: u64, phase: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, phase, a, b))
}

/// Trained (or freshly initialised) model with enough context to reuse it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub dims: InputDims,
    pub model: Model,
    /// Optimizer steps taken.
    pub step: u64,
    pub epochs_completed: usize,
    /// Seed of the stream the next epoch would draw from.
    pub rng_state: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SinkhornSummary {
    pub mean_iterations: f64,
    pub max_deviation: f64,
    pub non_converged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Per-pair accuracy in eval-set order (skipped pairs omitted).
    pub accuracies: Vec<f64>,
    pub mean_acc: f64,
    /// Population standard deviation over pairs.
    pub std_acc: f64,
    pub skipped: usize,
    /// Absent for methods without a Sinkhorn layer.
    pub sinkhorn: Option<SinkhornSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub code_version: String,
    pub config: ExperimentConfig,
    pub method: String,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub eval: EvalSummary,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

impl ResultRecord {
    /// Equality of everything except wall-clock timings.
    pub fn same_numbers(&self, other: &ResultRecord) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.code_version == other.code_version
            && self.config == other.config
            && self.method == other.method
            && bits(&self.epoch_losses) == bits(&other.epoch_losses)
            && bits(&self.eval.accuracies) == bits(&other.eval.accuracies)
            && self.eval.mean_acc.to_bits() == other.eval.mean_acc.to_bits()
            && self.eval.std_acc.to_bits() == other.eval.std_acc.to_bits()
            && self.eval.skipped == other.eval.skipped
            && self.eval.sinkhorn == other.eval.sinkhorn
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

enum TrainData {
    Synthetic(crate::graphs::SyntheticConfig),
    Stored(Vec<MatchingPair>),
}

fn train_data(config: &ExperimentConfig) -> Result<Option<TrainData>> {
    Ok(match &config.data {
        DataSource::Synthetic(s) => Some(TrainData::Synthetic(s.clone())),
        DataSource::Dataset { train: Some(path), .. } => {
            let pairs = load_pairs(path)?;
            if pairs.is_empty() {
                return Err(Error::Config(format!("training set {} is empty", path.display())));
            }
            Some(TrainData::Stored(pairs))
        }
        DataSource::Dataset { train: None, .. } => None,
    })
}

/// The fixed evaluation pairs for `config`: `eval_pairs` synthetic pairs from
/// their own seed stream, or the first `eval_pairs` records of the eval file.
pub fn eval_set(config: &ExperimentConfig) -> Result<Vec<MatchingPair>> {
    match &config.data {
        DataSource::Synthetic(s) => (0..config.eval_pairs)
            .map(|i| generate_synthetic_pair(s, &mut stream(config.seed, PHASE_EVAL, i as u64, 0)))
            .collect(),
        DataSource::Dataset { eval, .. } => {
            let mut pairs = load_pairs(eval)?;
            pairs.truncate(config.eval_pairs);
            if pairs.is_empty() {
                return Err(Error::Config(format!("eval set {} is empty", eval.display())));
            }
            Ok(pairs)
        }
    }
}

/// `count` synthetic pairs for export, from a stream disjoint from training
/// and evaluation.
pub fn generate_pairs(cfg: &crate::graphs::SyntheticConfig, seed: u64, count: usize) -> Result<Vec<MatchingPair>> {
    (0..count)
        .map(|i| generate_synthetic_pair(cfg, &mut stream(seed, PHASE_GENERATE, i as u64, 0)))
        .collect()
}

fn input_dims(config: &ExperimentConfig, data: Option<&TrainData>) -> Result<InputDims> {
    Ok(match (&config.data, data) {
        (DataSource::Synthetic(s), _) => InputDims {
            node: s.node_feature_dim,
            edge: s.edge_feature_dim,
        },
        (_, Some(TrainData::Stored(p))) => InputDims::of(&p[0]),
        _ => InputDims::of(&eval_set(config)?[0]),
    })
}

fn pair_loss(tape: &mut Tape, s: crate::diffcore::Var, pair: &MatchingPair, loss: LossKind) -> Result<crate::diffcore::Var> {
    match loss {
        LossKind::Permutation => permutation_loss(tape, s, &pair.gt),
        LossKind::Offset => offset_loss(tape, s, &OffsetContext::from_pair(pair), &pair.gt),
    }
}

/// Loss value and parameter gradients for one pair.
fn pair_gradients(
    model: &Model,
    store: &ParamStore,
    pair: &MatchingPair,
    loss: LossKind,
    sinkhorn: &SinkhornConfig,
) -> Result<(f64, Option<Gradients>)> {
    let mut tape = Tape::new();
    let f = model
        .forward_with(store, &mut tape, pair, sinkhorn)
        .expect("learned model")?;
    let l = pair_loss(&mut tape, f.s, pair, loss)?;
    let value = tape.value(l).item();
    if !value.is_finite() {
        return Ok((value, None));
    }
    Ok((value, Some(tape.backward(l)?)))
}

fn format_norms(store: &ParamStore) -> String {
    store
        .norms()
        .iter()
        .map(|(n, v)| format!("{n}={v:.4e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// The untrained model `train` starts from.
pub fn initial_model(config: &ExperimentConfig, dims: InputDims) -> Result<Model> {
    Model::build(config, dims, &mut stream(config.seed, PHASE_INIT, 0, 0))
}

/// Output of [`train`].
#[derive(Clone, Debug)]
pub struct Training {
    pub checkpoint: Checkpoint,
    pub epoch_losses: Vec<f64>,
    pub seconds: f64,
}

/// Initialises a model from `config.seed` and runs SGD with momentum.
///
/// Each batch's pairs are processed with `config.execution`; their gradients
/// are summed in batch order, so the result does not depend on scheduling.
pub fn train(config: &ExperimentConfig) -> Result<Training> {
    config.validate()?;
    let start = Instant::now();
    let data = train_data(config)?;
    let dims = input_dims(config, data.as_ref())?;
    let mut model = initial_model(config, dims)?;
    let mut checkpoint = Checkpoint {
        config: config.clone(),
        dims,
        model: model.clone(),
        step: 0,
        epochs_completed: 0,
        rng_state: derive_seed(config.seed, PHASE_TRAIN, 0, 0),
    };
    let Some(loss) = config.loss() else {
        return Ok(Training {
            checkpoint,
            epoch_losses: Vec::new(),
            seconds: start.elapsed().as_secs_f64(),
        });
    };
    let opt = config.optimizer();
    if opt.epochs > 0 && data.is_none() {
        return Err(Error::Config("training needs a training set".into()));
    }
    let mut velocity: Vec<Tensor> = model
        .params()
        .iter()
        .map(|(_, p)| Tensor::zeros(p.value().shape().to_vec()))
        .collect();
    let mut epoch_losses = Vec::with_capacity(opt.epochs);
    let mut step = 0u64;

    for epoch in 0..opt.epochs {
        let order: Vec<usize> = match data.as_ref().expect("checked above") {
            TrainData::Synthetic(_) => (0..opt.pairs_per_epoch).collect(),
            TrainData::Stored(p) => {
                let mut idx: Vec<usize> = (0..p.len()).collect();
                idx.shuffle(&mut stream(config.seed, PHASE_SHUFFLE, epoch as u64, 0));
                idx
            }
        };
        let mut total = 0.0;
        for chunk in order.chunks(opt.batch_size) {
            let results = {
                let store = model.params();
                let model = &model;
                let data = data.as_ref().expect("checked above");
                par::map(config.execution, chunk, |_, &idx| -> Result<(f64, Option<Gradients>)> {
                    let generated;
                    let pair = match data {
                        TrainData::Synthetic(s) => {
                            generated = generate_synthetic_pair(
                                s,
                                &mut stream(config.seed, PHASE_TRAIN, epoch as u64, idx as u64),
                            )?;
                            &generated
                        }
                        TrainData::Stored(p) => &p[idx],
                    };
                    pair_gradients(model, store, pair, loss, &config.sinkhorn_train)
                })
            };
            let store = model.params_mut().expect("learned model");
            store.zero_grad();
            let scale = 1.0 / chunk.len() as f64;
            for (r, &idx) in results.into_iter().zip(chunk) {
                let (value, grads) = match r {
                    Err(Error::Diff(DiffError::NonFinite { .. })) => (f64::NAN, None),
                    r => r?,
                };
                let Some(grads) = grads else {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        pair_index: idx,
                        loss: value,
                        param_norms: format_norms(store),
                    });
                };
                total += value;
                store.accumulate(&grads, scale);
            }
            let ids: Vec<_> = store.ids().collect();
            for (v, id) in velocity.iter_mut().zip(ids) {
                let p = store.get_mut(id);
                let g = p.grad().clone();
                for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                    *vi = opt.momentum * *vi + gi;
                }
                for (w, vi) in p.value_mut().data_mut().iter_mut().zip(v.data()) {
                    *w -= opt.learning_rate * vi;
                }
            }
            step += 1;
        }
        let mean = total / order.len().max(1) as f64;
        log::info!("{} epoch {epoch}: mean loss {mean:.6}", config.label());
        epoch_losses.push(mean);
    }

    if let Some(store) = model.params_mut() {
        store.zero_grad();
    }
    checkpoint.model = model;
    checkpoint.step = step;
    checkpoint.epochs_completed = opt.epochs;
    checkpoint.rng_state = derive_seed(config.seed, PHASE_TRAIN, opt.epochs as u64, 0);
    Ok(Training {
        checkpoint,
        epoch_losses,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Matches every pair and scores it against its ground truth. Pairs whose
/// feature dimensions do not fit the model are skipped and counted.
pub fn evaluate(model: &Model, pairs: &[MatchingPair], sinkhorn: &SinkhornConfig, exec: Execution) -> Result<EvalSummary> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let outcomes = par::map(exec, pairs, |_, pair| match model.predict(pair, sinkhorn) {
        Ok(p) => Ok(Some((matching_accuracy(&p.permutation, &pair.gt)?, p.stats))),
        Err(Error::Shape(msg)) => {
            log::warn!("skipping eval pair: {msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    });
    let mut accuracies = Vec::with_capacity(pairs.len());
    let mut skipped = 0;
    let mut stats = Vec::new();
    for o in outcomes {
        match o? {
            Some((acc, st)) => {
                accuracies.push(acc);
                stats.extend(st);
            }
            None => skipped += 1,
        }
    }
    if accuracies.is_empty() {
        return Err(Error::Shape(format!("all {skipped} eval pairs were incompatible with the model")));
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} of {} eval pairs", pairs.len());
    }
    let n = accuracies.len() as f64;
    let mean_acc = accuracies.iter().sum::<f64>() / n;
    let std_acc = (accuracies.iter().map(|a| (a - mean_acc).powi(2)).sum::<f64>() / n).sqrt();
    let sinkhorn = (!stats.is_empty()).then(|| SinkhornSummary {
        mean_iterations: stats.iter().map(|s| s.iterations as f64).sum::<f64>() / stats.len() as f64,
        max_deviation: stats.iter().map(|s| s.max_deviation).fold(0.0, f64::max),
        non_converged: stats.iter().filter(|s| !s.converged).count(),
    });
    Ok(EvalSummary {
        accuracies,
        mean_acc,
        std_acc,
        skipped,
        sinkhorn,
    })
}

/// Evaluates a checkpoint on `pairs` with its own eval settings.
pub fn evaluate_checkpoint(checkpoint: &Checkpoint, pairs: &[MatchingPair]) -> Result<ResultRecord> {
    let start = Instant::now();
    let c = &checkpoint.config;
    let eval = evaluate(&checkpoint.model, pairs, &c.sinkhorn_eval, c.execution)?;
    Ok(ResultRecord {
        code_version: CODE_VERSION.into(),
        config: c.clone(),
        method: c.label(),
        epoch_losses: Vec::new(),
        eval,
        train_seconds: 0.0,
        eval_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Train, then evaluate on the config's eval set.
pub fn run(config: &ExperimentConfig) -> Result<(Checkpoint, ResultRecord)> {
    let training = train(config)?;
    let pairs = eval_set(config)?;
    let mut record = evaluate_checkpoint(&training.checkpoint, &pairs)?;
    record.epoch_losses = training.epoch_losses;
    record.train_seconds = training.seconds;
    Ok((training.checkpoint, record))
}
