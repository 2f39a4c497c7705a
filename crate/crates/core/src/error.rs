use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced across the crate.
///
/// The variants map onto process exit codes in the CLI: configuration and
/// lookup problems exit with 2, I/O with 3, and format, validation and
/// compatibility failures with 4.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, index, emptiness).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An input was mathematically degenerate, e.g. a zero-norm vector fed to a cosine.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),

    #[error("unknown {kind} '{name}'; known: {known}")]
    Lookup {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("evaluation protocol error: {0}")]
    Protocol(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Lookup { .. } => 2,
            Error::Io { .. } => 3,
            Error::Format { .. }
            | Error::Validation(_)
            | Error::Compatibility(_)
            | Error::Protocol(_) => 4,
            Error::Contract(_) | Error::Degenerate(_) | Error::Index { .. } => 1,
        }
    }
}

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use contract;
