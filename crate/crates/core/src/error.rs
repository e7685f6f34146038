use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unknown {kind} code `{code}`")]
    UnknownCode { kind: &'static str, code: String },

    #[error("index {index} out of bounds for size {len}")]
    Bounds { index: usize, len: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("graph structure error: {0}")]
    Structure(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
