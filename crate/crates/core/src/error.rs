use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("covariance matrix is not positive semidefinite: leading minor {minor} fails")]
    NotPositiveSemidefinite { minor: usize },

    #[error(
        "model has negative correlations (min d_ij = {min_correlation}); signed Δ_n gives no \
         provable bound, use the absolute mode instead"
    )]
    NegativeCorrelation { min_correlation: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
