use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("diverged at iteration {iteration} (loss = {loss})")]
    Divergence { iteration: usize, loss: f64 },

    #[error("degenerate recursion at step {step}: rho = {value}")]
    DegenerateRecursion { step: usize, value: f64 },

    #[error("insufficient margin: m = {m} must be positive")]
    InsufficientMargin { m: i64 },

    #[error("invalid initialization: layer {layer} orthogonality residual {residual:e}")]
    InvalidInitialization { layer: usize, residual: f64 },

    #[error("degenerate between-class scatter (trace {trace:e})")]
    DegenerateBetweenClass { trace: f64 },

    #[error("config error for `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("{id}: {source}")]
    Experiment {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invariant violated in {context}: {detail}")]
    InvariantViolation { context: String, detail: String },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
