use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {context}{}", iteration.map(|t| format!(" at iteration {t}")).unwrap_or_default())]
    NonFinite {
        context: &'static str,
        iteration: Option<usize>,
    },

    #[error("invalid IDX file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("inconsistent input: {0}")]
    Consistency(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("optimizer state error: {0}")]
    State(String),

    #[error("enumeration of {outcomes} outcomes exceeds the cap of {cap}")]
    Size { outcomes: u128, cap: u128 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("stored-gradient table needs {needed} bytes, above the cap of {cap} bytes")]
    MemoryCap { needed: u128, cap: u128 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach an iteration index to a numeric error produced without one.
    pub fn at_iteration(self, t: usize) -> Self {
        match self {
            Error::NonFinite {
                context,
                iteration: None,
            } => Error::NonFinite {
                context,
                iteration: Some(t),
            },
            other => other,
        }
    }
}
