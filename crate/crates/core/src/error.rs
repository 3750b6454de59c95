//! Crate-wide error type and result alias.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty support set")]
    EmptySupport,

    #[error("empty query set")]
    EmptyQuery,

    #[error("empty input")]
    EmptyInput,

    #[error("non-finite gradient in {context}")]
    NonFiniteGradient { context: String },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("series too short: need more than {needed} days, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("missing embedding for product {product}")]
    MissingEmbedding { product: usize },

    #[error("singular system")]
    SingularSystem,

    #[error("all targets near zero; MAPE is undefined")]
    AllTargetsNearZero,

    #[error("schema mismatch in {file}: missing column {column:?}")]
    SchemaMismatch { file: String, column: String },

    #[error("parse error in {file} row {row}, column {column}: {reason}")]
    ParseError {
        file: String,
        row: usize,
        column: String,
        reason: String,
    },

    #[error("empty table: {0}")]
    EmptyTable(String),

    #[error("malformed file {file}: {reason}")]
    MalformedFile { file: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 1,
            Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } | Error::SingularSystem => 3,
            _ => 2,
        }
    }
}
