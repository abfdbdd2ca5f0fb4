use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Diverged {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("no feasible delta: no grid value reached training AUC >= {tau}")]
    NoFeasibleDelta { tau: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Stable machine-readable tag used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Protocol(_) => "protocol",
            Error::Diverged { .. } => "diverged",
            Error::NoFeasibleDelta { .. } => "no_feasible_delta",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
