use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("grid too small: extent {extent:.4e} m must be at least {required:.4e} m")]
    GridTooSmall { extent: f64, required: f64 },

    #[error(
        "{path} propagation over {distance:.4e} m violates sampling (critical distance {critical:.4e} m)"
    )]
    SamplingViolation {
        path: &'static str,
        distance: f64,
        critical: f64,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("insufficient ensemble: {have} realizations, need at least {need}")]
    InsufficientEnsemble { have: usize, need: usize },

    #[error("autocorrelation is flat; no speckle peak to measure")]
    FlatAutocorrelation,

    #[error("no peaks found in profile")]
    NoPeaks,

    #[error("truth image is identically zero")]
    ZeroTruth,

    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("config line {line}: {reason}")]
    ConfigParse { line: usize, reason: String },

    #[error("config key `{key}`: {reason}")]
    ConfigInvalid { key: String, reason: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}

/// Fails with `InvalidArgument` unless `value` is finite and strictly positive.
pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and > 0, got {value}")))
    }
}
