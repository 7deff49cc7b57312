use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parity arity: k = {k} exceeds n = {n}")]
    InvalidArity { k: usize, n: usize },

    #[error("index {index} out of bounds for length {len}")]
    Bounds { index: usize, len: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("power-law fit failed: {0}")]
    Fit(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("affinity row {row} has zero degree (isolated node)")]
    IsolatedNode { row: usize },

    #[error("eigensolver did not converge for index {index} after {iterations} iterations")]
    NoConvergence { index: usize, iterations: usize },

    #[error("eigenpair {index} residual {residual:e} exceeds tolerance")]
    Residual { index: usize, residual: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    /// Stable short identifier used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::InvalidArity { .. } => "invalid_arity",
            Error::Bounds { .. } => "bounds",
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::Fit(_) => "fit",
            Error::Empty(_) => "empty",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::IsolatedNode { .. } => "isolated_node",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Residual { .. } => "residual",
            Error::Unsupported(_) => "unsupported",
            Error::Config { .. } => "config",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
