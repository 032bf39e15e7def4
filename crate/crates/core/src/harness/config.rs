use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assign::SinkhornConfig;
use crate::baselines::SpectralBaseline;
use crate::graphs::SyntheticConfig;
use crate::par::Execution;
use crate::{Error, Result};

/// Which matcher an experiment trains and evaluates.
///
/// Serialized as a short string: `pia`, `pca`, `pca-iter:K`, `gmn`, `gmn-pl`,
/// `sm`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Pia,
    Pca,
    PcaIterative { iterations: usize },
    /// Learnable-affinity spectral matcher trained with the offset loss.
    Gmn,
    /// The same model trained with the permutation loss.
    GmnPl,
    /// Spectral matching on a fixed Gaussian affinity; nothing to train.
    SmUnlearned,
}

impl Method {
    pub fn is_learned(self) -> bool {
        self != Method::SmUnlearned
    }

    /// Loss used when the config leaves it unset.
    pub fn default_loss(self) -> Option<LossKind> {
        match self {
            Method::SmUnlearned => None,
            Method::Gmn => Some(LossKind::Offset),
            _ => Some(LossKind::Permutation),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Pia => f.write_str("pia"),
            Method::Pca => f.write_str("pca"),
            Method::PcaIterative { iterations } => write!(f, "pca-iter:{iterations}"),
            Method::Gmn => f.write_str("gmn"),
            Method::GmnPl => f.write_str("gmn-pl"),
            Method::SmUnlearned => f.write_str("sm"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "pia" => Method::Pia,
            "pca" => Method::Pca,
            "gmn" => Method::Gmn,
            "gmn-pl" => Method::GmnPl,
            "sm" | "sm-unlearned" => Method::SmUnlearned,
            other => {
                let k = other
                    .strip_prefix("pca-iter:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))?;
                Method::PcaIterative { iterations: k }
            }
        })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Permutation,
    Offset,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "permutation" | "perm" => Ok(LossKind::Permutation),
            "offset" => Ok(LossKind::Offset),
            _ => Err(Error::Config(format!("unknown loss {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Synthetic pairs drawn per epoch; ignored for stored datasets, where an
    /// epoch is one pass over the file.
    pub pairs_per_epoch: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size: 8,
            epochs: 200,
            pairs_per_epoch: 1000,
        }
    }
}

/// Where training and evaluation pairs come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "source")]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Dataset { train: Option<PathBuf>, eval: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmnSettings {
    pub power_iters: usize,
    pub tau: f64,
}

impl Default for GmnSettings {
    fn default() -> Self {
        GmnSettings {
            power_iters: 20,
            tau: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Unset means the method's default; must stay unset for `sm`.
    pub loss: Option<LossKind>,
    pub data: DataSource,
    /// Unset means the defaults; must stay unset for `sm`.
    pub optimizer: Option<OptimizerConfig>,
    pub eval_pairs: usize,
    pub sinkhorn_train: SinkhornConfig,
    pub sinkhorn_eval: SinkhornConfig,
    pub hidden_width: usize,
    pub tau: f64,
    pub normalize_input: bool,
    pub gmn: GmnSettings,
    pub spectral: SpectralBaseline,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Pca,
            loss: None,
            data: DataSource::default(),
            optimizer: None,
            eval_pairs: 500,
            sinkhorn_train: SinkhornConfig::TRAIN,
            sinkhorn_eval: SinkhornConfig::EVAL,
            hidden_width: 256,
            tau: 0.005,
            normalize_input: true,
            gmn: GmnSettings::default(),
            spectral: SpectralBaseline::default(),
            seed: 0,
            execution: Execution::Parallel,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.method.is_learned() && (self.loss.is_some() || self.optimizer.is_some()) {
            return Err(Error::Config(
                "the unlearned SM baseline takes no loss or optimizer settings".into(),
            ));
        }
        match (self.method, self.loss) {
            (Method::Gmn, Some(LossKind::Permutation)) => {
                return Err(Error::Config("gmn trains with the offset loss; use gmn-pl".into()))
            }
            (Method::GmnPl, Some(LossKind::Offset)) => {
                return Err(Error::Config("gmn-pl trains with the permutation loss; use gmn".into()))
            }
            (Method::PcaIterative { iterations: 0 }, _) => {
                return Err(Error::Config("pca-iter needs at least one iteration".into()))
            }
            _ => {}
        }
        let opt = self.optimizer();
        if self.method.is_learned() {
            if !(opt.learning_rate > 0.0) || !opt.learning_rate.is_finite() {
                return Err(Error::Config(format!("learning_rate must be positive, got {}", opt.learning_rate)));
            }
            if !(0.0..1.0).contains(&opt.momentum) {
                return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", opt.momentum)));
            }
            if opt.batch_size == 0 {
                return Err(Error::Config("batch_size must be at least 1".into()));
            }
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden_width must be positive".into()));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.eval_pairs == 0 {
            return Err(Error::Config("eval_pairs must be at least 1".into()));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        Ok(())
    }

    /// The loss actually used, after applying the method default.
    pub fn loss(&self) -> Option<LossKind> {
        if self.method.is_learned() {
            self.loss.or(self.method.default_loss())
        } else {
            None
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        self.optimizer.clone().unwrap_or_default()
    }

    /// Epochs that will actually run (zero for unlearned methods).
    pub fn epochs(&self) -> usize {
        if self.method.is_learned() {
            self.optimizer().epochs
        } else {
            0
        }
    }

    /// Name used in result tables, e.g. `pca` or `pca+offset`.
    pub fn label(&self) -> String {
        match self.loss() {
            Some(l) if Some(l) != self.method.default_loss() => {
                format!("{}+{}", self.method, if l == LossKind::Offset { "offset" } else { "perm" })
            }
            _ => self.method.to_string(),
        }
    }
}
