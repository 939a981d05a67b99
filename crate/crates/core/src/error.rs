//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An op was given operands whose shapes do not compose.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// NaN or infinity encountered in an op input.
    #[error("{op}: non-finite input value")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Checkpoint directory failed validation; names the file and field.
    #[error("{file}: corrupt checkpoint, field `{field}`: {detail}")]
    CorruptCheckpoint {
        file: String,
        field: String,
        detail: String,
    },

    /// Adapter or model checkpoint does not match the target model.
    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),

    #[error("data error: {0}")]
    Data(String),

    /// Experiment protocol guard tripped (dev-set leakage, source-language scoring, ...).
    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}
