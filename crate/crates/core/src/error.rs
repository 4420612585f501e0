use thiserror::Error;

/// Errors produced by the tracking library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of its valid domain. The first field
    /// names the offending key.
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// A query fell outside the domain of the queried object.
    #[error("out of range: {0}")]
    Range(String),

    /// The object is not in a state that supports the operation.
    #[error("invalid state: {0}")]
    State(String),

    /// Not enough data to produce a result (empty point set, single knot...).
    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
