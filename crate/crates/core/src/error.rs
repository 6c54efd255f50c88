//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of inputs do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An operation was asked to work on zero observations.
    #[error("empty dataset")]
    EmptyDataset,

    /// A configuration value violates its invariant.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A numeric input contained NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// The restricted estimator has no rows to work with.
    #[error("no uncensored observations")]
    NoUncensoredRows,

    /// The positive part of the signal vanishes, so the signal-to-noise
    /// ratio is undefined.
    #[error("signal has zero positive part; snr is undefined")]
    ZeroSignal,

    /// Every sampled direction was degenerate.
    #[error("all sampled directions were degenerate: {0}")]
    DegenerateDirections(String),

    /// File I/O failure, annotated with the offending path.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed CSV or sidecar content.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
