use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid band {lo_hz}-{hi_hz} Hz for sample rate {fs} Hz")]
    InvalidBand { lo_hz: f64, hi_hz: f64, fs: f64 },

    #[error("degenerate source: {0}")]
    DegenerateSource(String),

    #[error("input too short: {what} has {got} samples, need at least {need}")]
    TooShort { what: &'static str, got: usize, need: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error in {}: {msg}", file.display())]
    Format { file: PathBuf, msg: String },

    #[error("config validation failed for keys: {}", .0.join(", "))]
    Config(Vec<String>),

    #[error("training diverged at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidBand { .. } => "invalid_band",
            Error::DegenerateSource(_) => "degenerate_source",
            Error::TooShort { .. } => "too_short",
            Error::Shape(_) => "shape_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
