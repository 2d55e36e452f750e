//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DesigenError>;

#[derive(Error, Debug)]
pub enum DesigenError {
    /// Caller passed an argument outside the documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A persisted file does not match its schema; names the offending field.
    #[error("schema violation in {path}: {detail}")]
    SchemaViolation { path: String, detail: String },

    /// Prompt contains a token outside the grammar vocabulary.
    #[error("unknown token {token:?}; prompt vocabulary is closed")]
    UnknownToken { token: String },

    /// Layout sequence cannot be decoded; names the offending index.
    #[error("layout decode error at token index {index}: {detail}")]
    LayoutDecode { index: usize, detail: String },

    /// Object/element placement failed after the retry bound.
    #[error("placement failure: {0}")]
    PlacementFailure(String),

    /// Rejection sampling cannot satisfy the filter criteria.
    #[error("infeasible style space: {0}")]
    InfeasibleStyleSpace(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    /// Configuration file failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint is missing, corrupt or from an incompatible version.
    #[error("checkpoint error in {path}: {detail}")]
    Checkpoint { path: String, detail: String },

    /// Internal consistency check failed (bug guard, not a user error).
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DesigenError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        DesigenError::Io { path: path.into(), source }
    }

    /// Exit code contract: validation errors are 1, runtime failures are 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            DesigenError::InvalidArgument(_)
            | DesigenError::UnknownToken { .. }
            | DesigenError::Config(_) => 1,
            _ => 2,
        }
    }
}
