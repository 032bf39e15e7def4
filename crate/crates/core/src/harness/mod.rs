//! Experiment plumbing: configs, seeded training and evaluation, sweeps,
//! and checkpoints.
//!
//! Every random draw comes from a ChaCha stream keyed by
//! `(seed, phase, epoch, index)`, so results depend only on the config and
//! never on thread scheduling.

mod checkpoint;
mod config;
mod gradsuite;
mod model;
mod run;
mod sweep;

pub use checkpoint::{decode, encode, load_checkpoint, load_checkpoint_for, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{DataSource, ExperimentConfig, GmnSettings, LossKind, Method, OptimizerConfig};
pub use gradsuite::{gradient_suite, GradCheckCase, GMN_TOLERANCE, TOLERANCE as GRAD_TOLERANCE};
pub use model::{InputDims, Model, PairPrediction};
pub use run::{
    derive_seed, eval_set, evaluate, evaluate_checkpoint, generate_pairs, initial_model, run, train, Checkpoint, EvalSummary, ResultRecord,
    SinkhornSummary, Training, CODE_VERSION,
};
pub use sweep::{cell_config, read_csv, sweep, write_csv, Axis, MethodSpec, SweepCell, SweepRow};
