use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: line {line}: feature index {index} out of range for vocabulary of {vocab}")]
    Index {
        path: PathBuf,
        line: usize,
        index: usize,
        vocab: usize,
    },

    #[error("{path}: line {line}: duplicate feature index {index}")]
    DuplicateIndex {
        path: PathBuf,
        line: usize,
        index: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("discretization policy violated: {0}")]
    Policy(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value outside the loss domain: {0}")]
    Domain(String),

    #[error("non-finite numbers encountered: {0}")]
    Numeric(String),

    #[error("empty structure: {0}")]
    EmptyStructure(String),

    #[error("masked-out weight became nonzero: {0}")]
    MaskViolation(String),

    #[error("no interpretability coverage: {0}")]
    NoCoverage(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
