use thiserror::Error;

use crate::kernel::GpHyperparams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("correlation matrix is not positive definite even with jitter {jitter:e}")]
    SingularMatrix { jitter: f64 },

    #[error("not implemented: {0}")]
    NotImplemented(&'static str),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("GP fit failed: {reason}")]
    FitFailure {
        reason: String,
        best: Option<Box<GpHyperparams>>,
    },

    #[error("sequential linked-GP fit: {0}")]
    SequentialFit(String),

    #[error("elliptical slice sampler stalled (bracket below 1e-12 rad) at state of dimension {}", .snapshot.len())]
    EssStall { snapshot: Vec<f64> },

    #[error("SEM failed at iteration {iteration} on node `{node}`: {source}")]
    Sem {
        iteration: usize,
        node: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown latent node `{0}`")]
    UnknownLatent(String),

    #[error("column `{0}` has no observed values")]
    EmptyColumn(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: column `{0}`")]
    Schema(String),

    #[error("window has no observations")]
    EmptyWindow,

    #[error("column `{0}` is degenerate (fewer than two observations or zero spread)")]
    DegenerateColumn(String),

    #[error("mask plan does not match table: {0}")]
    MaskConsistency(String),

    #[error("incomplete imputation result: {0}")]
    IncompleteResult(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
