use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error at line {line}, field `{field}`: {message}")]
    Validation {
        line: usize,
        field: String,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("index {index} out of range for {what} (size {size})")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn index(what: &'static str, index: usize, size: usize) -> Self {
        Error::Index { what, index, size }
    }
}
