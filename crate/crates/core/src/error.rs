use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: shape mismatch for `{id}`: manifest declares {expected_rows}x{expected_cols}, file has {found}")]
    ShapeMismatch {
        path: PathBuf,
        id: String,
        expected_rows: usize,
        expected_cols: usize,
        found: String,
    },

    #[error("utterance `{id}`: invalid weight {value} at row {row}, col {col} (weights must be finite and > 0)")]
    InvalidWeight {
        id: String,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("utterance `{id}`: {dim} {size} exceeds grid limit {limit}")]
    ExceedsGrid {
        id: String,
        dim: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("duplicate utterance id `{0}`")]
    DuplicateId(String),

    #[error("need at least {needed} pooled weights to fit boundaries, got {got}")]
    TooFewWeights { needed: usize, got: usize },

    #[error("feature vector has length {got}, forest expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, e: csv::Error) -> Self {
        let path = path.into();
        let line = e.position().map_or(0, |p| p.line() as usize);
        let msg = e.to_string();
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io { path, source },
            _ => Error::Parse { path, line, msg },
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
