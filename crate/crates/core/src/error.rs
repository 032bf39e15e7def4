use crate::diffcore::DiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("degenerate point set: {0}")]
    DegeneratePoints(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-positive input: {0}")]
    NonPositive(String),
    #[error("affinity overflow after stabilization: max exponent {max_exponent}")]
    AffinityOverflow { max_exponent: f64 },
    #[error("zero affinity matrix")]
    ZeroMatrix,
    #[error("missing edge features on graph {graph}")]
    MissingEdgeFeatures { graph: usize },
    #[error("dataset record {record} (line {line}): {message}")]
    Dataset {
        record: usize,
        line: usize,
        message: String,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint version mismatch: file has version {found}, this build reads version {expected}")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("hidden width mismatch: checkpoint has {checkpoint}, config has {config}")]
    HiddenWidthMismatch { checkpoint: usize, config: usize },
    #[error("non-finite loss {loss} at epoch {epoch}, pair {pair_index}; parameter norms: {param_norms}")]
    NonFiniteLoss {
        epoch: usize,
        pair_index: usize,
        loss: f64,
        param_norms: String,
    },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category, used by the CLI's error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Diff(_) | Error::AffinityOverflow { .. } | Error::NonFiniteLoss { .. } => "numeric",
            Error::DegeneratePoints(_)
            | Error::InvalidGraph(_)
            | Error::InvalidPermutation(_)
            | Error::Shape(_)
            | Error::NonPositive(_)
            | Error::ZeroMatrix
            | Error::MissingEdgeFeatures { .. }
            | Error::InvalidArgument(_) => "input",
            Error::Dataset { .. } => "dataset",
            Error::Config(_) | Error::HiddenWidthMismatch { .. } => "config",
            Error::Checkpoint(_) | Error::CheckpointVersion { .. } => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}
