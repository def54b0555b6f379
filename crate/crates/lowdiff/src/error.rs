//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("config: {0}")]
    Config(String),

    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),

    #[error("corrupt checkpoint {path}: {reason}")]
    Corrupt { path: String, reason: String },

    #[error("bad checkpoint format {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("no full checkpoint at or before iteration {0}")]
    MissingFull(u64),

    #[error("differential chain gap: expected iteration {expected}, found {found}")]
    ChainGap { expected: u64, found: u64 },

    #[error("pipeline: {0}")]
    Pipeline(String),

    #[error("layer assembly: {0}")]
    Assembly(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 usage/config, 2 data/storage,
    /// 3 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Storage(_)
            | Error::Corrupt { .. }
            | Error::Format { .. }
            | Error::MissingFull(_)
            | Error::ChainGap { .. } => 2,
            Error::Dimension { .. }
            | Error::NonFinite { .. }
            | Error::Domain(_)
            | Error::Pipeline(_)
            | Error::Assembly(_) => 3,
        }
    }
}
