//! Crate-wide error type and exit-code classification.

use thiserror::Error;

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or inconsistent configuration (exit 2).
    Config,
    /// Bad input data or missing/incompatible artifacts (exit 3).
    Input,
    /// Generation backend failed and no fallback was allowed (exit 4).
    Backend,
    /// Anything else (exit 1).
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("alarm code {code} out of range for {bits} alarm bits")]
    CodeOutOfRange { code: u64, bits: u32 },

    #[error("invalid alarm registry: {0}")]
    Registry(String),

    #[error("case memory is empty")]
    EmptyMemory,

    #[error("duplicate case id: {0}")]
    DuplicateCaseId(String),

    #[error("no neighbors to vote over")]
    NoEvidence,

    #[error("sequence length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("evidence package inconsistency: {0}")]
    EvidenceMismatch(String),

    #[error("artifact version mismatch: {0}")]
    VersionMismatch(String),

    #[error("empty test set")]
    EmptyTestSet,

    #[error("generation backend error: {0}")]
    Backend(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(String),
}

impl Error {
    /// Maps an error to the CLI exit-code class.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Registry(_) | Error::Toml(_) | Error::VersionMismatch(_) => {
                ErrorKind::Config
            }
            Error::MalformedHeader(_)
            | Error::Input(_)
            | Error::CodeOutOfRange { .. }
            | Error::EmptyMemory
            | Error::DuplicateCaseId(_)
            | Error::NoEvidence
            | Error::LengthMismatch { .. }
            | Error::EvidenceMismatch(_)
            | Error::EmptyTestSet
            | Error::Io(_)
            | Error::Json(_) => ErrorKind::Input,
            Error::Backend(_) => ErrorKind::Backend,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Input => 3,
            ErrorKind::Backend => 4,
            ErrorKind::Internal => 1,
        }
    }
}
