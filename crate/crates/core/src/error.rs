use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PteError>;

#[derive(Debug, Error)]
pub enum PteError {
    /// Unknown names, malformed configuration files, invalid hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed, inconsistent or missing data.
    #[error("data error: {0}")]
    Data(String),

    #[error("numerical error at {location}: {message}")]
    Numerical { location: String, message: String },

    /// A caller broke an operation's contract (frozen model mutated, forbidden split passed in).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("probing failed: {0}")]
    ProbingFailed(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PteError {
    pub fn numerical(location: impl Into<String>, message: impl Into<String>) -> Self {
        PteError::Numerical {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PteError::Io {
            path: path.into(),
            source,
        }
    }
}
