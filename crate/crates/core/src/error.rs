use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed sentence record: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("sentence {index}: {message}")]
    InvalidSentence { index: usize, message: String },

    #[error("label {label:?} occurs in {available} sentence(s), fewer than the {required} shots requested")]
    InsufficientShots {
        label: String,
        available: usize,
        required: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("domain {0:?} is not part of the similarity universe")]
    NotInUniverse(String),

    #[error("target {target:?} has {count} sweep record(s); at least {required} are needed")]
    Underdetermined {
        target: String,
        count: usize,
        required: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Validation errors are caused by bad user input rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFinite(_))
    }
}
