use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PsuError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PsuError {
    /// A hyperparameter lies outside the domain the neuron model is defined on.
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("kernel is not lower triangular: entry ({row}, {col}) = {value}")]
    NotCausal { row: usize, col: usize, value: f64 },

    #[error("invalid tensor contents: {0}")]
    InvalidValue(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PsuError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
