//! Error types shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Shape or layout mismatch. The message names the offending layer or
    /// input block.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid argument value (empty vector, out-of-range index, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An enumeration would exceed the configured capacity.
    #[error("capacity exceeded: needed {needed}, limit {limit}")]
    Capacity { needed: usize, limit: usize },

    /// Collected data violates a batch invariant.
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure during training (NaN gradient or loss).
    #[error("training error: {0}")]
    Training(String),

    /// Configuration file or override problem, with the offending field.
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// Checkpoint serialization problem.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
