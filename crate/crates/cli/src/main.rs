use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gmatch::graphs::save_pairs;
use gmatch::harness::{
    evaluate_checkpoint, generate_pairs, gradient_suite, load_checkpoint, run, save_checkpoint, sweep, write_csv,
    Axis, DataSource, ExperimentConfig, MethodSpec, ResultRecord,
};
use gmatch::par::Execution;
use gmatch::{Error, Result};

#[derive(Parser)]
#[command(name = "gmatch", version, about = "Train and evaluate deep graph matching models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic matching pairs as JSON lines.
    Generate {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Train a model, evaluate it, and write a checkpoint.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Where to write the result record as JSON.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate on this dataset instead of the checkpoint's own eval set.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        eval_pairs: Option<usize>,
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Train and evaluate several methods along one axis; writes CSV.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// k_pt, sigma_feat or iterations.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// e.g. pca,pca+offset,sm
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<String>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Experiment settings. A TOML file given with `--config` supplies defaults;
/// any flag here overrides it.
#[derive(Args, Default)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// pia, pca, pca-iter:K, gmn, gmn-pl, sm
    #[arg(long)]
    method: Option<String>,
    /// permutation or offset
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pairs_per_epoch: Option<usize>,
    #[arg(long)]
    eval_pairs: Option<usize>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k_pt: Option<usize>,
    #[arg(long)]
    sigma_feat: Option<f64>,
    #[arg(long)]
    sigma_coo: Option<f64>,
    #[arg(long)]
    node_dim: Option<usize>,
    #[arg(long)]
    edge_dim: Option<usize>,
    /// Training pairs file (JSON lines); switches to stored data.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Evaluation pairs file (JSON lines); switches to stored data.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    sinkhorn_train_iters: Option<usize>,
    #[arg(long)]
    sinkhorn_eval_iters: Option<usize>,
    /// Process pairs one at a time instead of on the thread pool.
    #[arg(long)]
    sequential: bool,
}

fn read_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => read_config_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = &self.method {
            c.method = m.parse()?;
            if !c.method.is_learned() {
                c.loss = None;
                c.optimizer = None;
            }
        }
        if let Some(l) = &self.loss {
            c.loss = Some(l.parse()?);
        }
        let optimizer_flags = [
            self.lr.is_some(),
            self.momentum.is_some(),
            self.batch_size.is_some(),
            self.epochs.is_some(),
            self.pairs_per_epoch.is_some(),
        ];
        if optimizer_flags.iter().any(|&b| b) {
            let mut o = c.optimizer.clone().unwrap_or_default();
            o.learning_rate = self.lr.unwrap_or(o.learning_rate);
            o.momentum = self.momentum.unwrap_or(o.momentum);
            o.batch_size = self.batch_size.unwrap_or(o.batch_size);
            o.epochs = self.epochs.unwrap_or(o.epochs);
            o.pairs_per_epoch = self.pairs_per_epoch.unwrap_or(o.pairs_per_epoch);
            c.optimizer = Some(o);
        }
        c.eval_pairs = self.eval_pairs.unwrap_or(c.eval_pairs);
        c.hidden_width = self.hidden_width.unwrap_or(c.hidden_width);
        c.tau = self.tau.unwrap_or(c.tau);
        c.seed = self.seed.unwrap_or(c.seed);
        if let Some(i) = self.sinkhorn_train_iters {
            c.sinkhorn_train.max_iters = i;
        }
        if let Some(i) = self.sinkhorn_eval_iters {
            c.sinkhorn_eval.max_iters = i;
        }
        if self.sequential {
            c.execution = Execution::Sequential;
        }

        if self.train_data.is_some() || self.eval_data.is_some() {
            let eval = self
                .eval_data
                .clone()
                .ok_or_else(|| Error::Config("--train-data needs --eval-data".into()))?;
            c.data = DataSource::Dataset {
                train: self.train_data.clone(),
                eval,
            };
        }
        let synthetic_flags = [
            self.k_pt.is_some(),
            self.sigma_feat.is_some(),
            self.sigma_coo.is_some(),
            self.node_dim.is_some(),
            self.edge_dim.is_some(),
        ];
        if synthetic_flags.iter().any(|&b| b) {
            let DataSource::Synthetic(s) = &mut c.data else {
                return Err(Error::Config("synthetic-data flags conflict with a stored dataset".into()));
            };
            s.k_pt = self.k_pt.unwrap_or(s.k_pt);
            s.sigma_feat = self.sigma_feat.unwrap_or(s.sigma_feat);
            s.sigma_coo = self.sigma_coo.unwrap_or(s.sigma_coo);
            s.node_feature_dim = self.node_dim.unwrap_or(s.node_feature_dim);
            s.edge_feature_dim = self.edge_dim.unwrap_or(s.edge_feature_dim);
        }
        c.validate()?;
        Ok(c)
    }
}

fn write_record(record: &ResultRecord, path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, record.to_json()?)?;
    }
    let mut out = io::stdout().lock();
    let sk = record
        .eval
        .sinkhorn
        .map(|s| format!(" sinkhorn_mean_iters={:.1}", s.mean_iterations))
        .unwrap_or_default();
    writeln!(
        out,
        "method={} mean_acc={:.4} std_acc={:.4} pairs={} skipped={} epochs={}{}",
        record.method,
        record.eval.mean_acc,
        record.eval.std_acc,
        record.eval.accuracies.len(),
        record.eval.skipped,
        record.epoch_losses.len(),
        sk
    )?;
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { exp, out, count } => {
            let c = exp.resolve()?;
            let DataSource::Synthetic(s) = &c.data else {
                return Err(Error::Config("generate needs a synthetic data config".into()));
            };
            save_pairs(&out, &generate_pairs(s, c.seed, count)?)?;
            println!("wrote {count} pairs to {}", out.display());
        }
        Command::Train { exp, checkpoint, record } => {
            let c = exp.resolve()?;
            let (ck, rec) = run(&c)?;
            save_checkpoint(&checkpoint, &ck)?;
            write_record(&rec, record.as_deref())?;
        }
        Command::Eval {
            checkpoint,
            data,
            eval_pairs,
            record,
        } => {
            let mut ck = load_checkpoint(&checkpoint)?;
            if let Some(n) = eval_pairs {
                ck.config.eval_pairs = n;
            }
            let pairs = match data {
                Some(p) => {
                    let mut pairs = gmatch::graphs::load_pairs(p)?;
                    pairs.truncate(ck.config.eval_pairs);
                    pairs
                }
                None => gmatch::harness::eval_set(&ck.config)?,
            };
            let rec = evaluate_checkpoint(&ck, &pairs)?;
            write_record(&rec, record.as_deref())?;
        }
        Command::Sweep {
            exp,
            axis,
            values,
            methods,
            out,
        } => {
            let c = exp.resolve()?;
            let axis: Axis = axis.parse()?;
            let methods = methods.iter().map(|m| m.parse()).collect::<Result<Vec<MethodSpec>>>()?;
            let cells = sweep(&c, &methods, axis, &values)?;
            for cell in &cells {
                if let Some(e) = &cell.error {
                    log::warn!("cell {} {}={} failed: {e}", cell.row.method, cell.row.axis, cell.row.value);
                }
            }
            let rows: Vec<_> = cells.into_iter().map(|c| c.row).collect();
            match out {
                Some(p) => write_csv(fs::File::create(p)?, &rows)?,
                None => write_csv(io::stdout().lock(), &rows)?,
            }
        }
        Command::Gradcheck { seed } => {
            let cases = gradient_suite(seed)?;
            let mut failed = Vec::new();
            for c in &cases {
                let status = if c.report.passed { "PASS" } else { "FAIL" };
                println!(
                    "{status} {:<24} max_rel_error={:.3e} tolerance={:.0e} coords={}",
                    c.name, c.report.max_rel_error, c.report.tolerance, c.report.coords_checked
                );
                if !c.report.passed {
                    failed.push(c.name);
                }
            }
            if !failed.is_empty() {
                return Err(Error::Diff(gmatch::diffcore::DiffError::InvalidArgument(format!(
                    "gradient check failed for {}",
                    failed.join(", ")
                ))));
            }
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}

