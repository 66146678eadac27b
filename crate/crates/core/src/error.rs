use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: field `{field}`: {msg}")]
    Schema {
        path: String,
        line: usize,
        field: String,
        msg: String,
    },

    #[error("format version mismatch: expected `{expected}`, found `{found}`")]
    Version { expected: String, found: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {left:?} vs {right:?} ({context})")]
    Shape {
        left: Vec<usize>,
        right: Vec<usize>,
        context: &'static str,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("vocabulary hash mismatch: checkpoint has {expected}, vocabulary hashes to {found}")]
    VocabHash { expected: String, found: String },

    #[error("checkpoint truncated: expected {expected} bytes of tensor data, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("checkpoint checksum mismatch: tensor data is corrupt")]
    Checksum,

    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Schema { .. } => "schema",
            Error::Version { .. } => "version",
            Error::Config(_) => "config",
            Error::Invalid(_) => "invalid",
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::Diverged { .. } => "diverged",
            Error::VocabHash { .. } => "vocab_hash",
            Error::Truncated { .. } => "truncated",
            Error::Checksum => "checksum",
            Error::CheckFailed(_) => "check_failed",
        }
    }
}

impl Error {
    /// Process exit status for this error; usage errors exit with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Schema { .. } => 4,
            Error::Version { .. } => 5,
            Error::Config(_) => 6,
            Error::Invalid(_) | Error::Shape { .. } => 7,
            Error::NonFinite(_) | Error::Diverged { .. } => 8,
            Error::VocabHash { .. } => 9,
            Error::Truncated { .. } => 10,
            Error::Checksum => 11,
            Error::CheckFailed(_) => 12,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
