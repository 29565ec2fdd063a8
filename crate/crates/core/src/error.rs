// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

use crate::store::Checkpoint;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence of length {len} exceeds the context window of {n_ctx}")]
    SequenceTooLong { len: usize, n_ctx: usize },

    #[error("token id {token} is outside the vocabulary of size {d_vocab}")]
    TokenOutOfRange { token: u32, d_vocab: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite gradient in tensor `{tensor}`")]
    NonFiniteGradient { tensor: String },

    /// Training produced a non-finite loss or gradient. `last_good` holds the
    /// most recent finite snapshot, if one was taken.
    #[error("training diverged at step {step}: {reason}")]
    Diverged {
        step: usize,
        reason: String,
        last_good: Option<Box<Checkpoint>>,
    },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("unsupported format version `{found}` (expected `{expected}`)")]
    VersionMismatch { found: String, expected: String },

    #[error("invalid dump: {0}")]
    InvalidDump(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("missing input {}: run `seedstab {command}` first", path.display())]
    MissingInput {
        path: PathBuf,
        command: &'static str,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short identifier for each failure class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::SequenceTooLong { .. } => "sequence-too-long",
            Error::TokenOutOfRange { .. } => "token-out-of-range",
            Error::Usage(_) => "usage",
            Error::NonFiniteGradient { .. } => "non-finite-gradient",
            Error::Diverged { .. } => "diverged",
            Error::CorruptHeader(_) => "corrupt-header",
            Error::TruncatedPayload { .. } => "truncated-payload",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::InvalidDump(_) => "invalid-dump",
            Error::Parse { .. } => "parse",
            Error::UndefinedCorrelation(_) => "undefined-correlation",
            Error::DegenerateKernel(_) => "degenerate-kernel",
            Error::MissingInput { .. } => "missing-input",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
