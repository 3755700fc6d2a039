use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: format error at byte offset {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("unlabeled instance at column {0}")]
    UnlabeledInstance(usize),

    #[error("duplicate category name {0:?}")]
    DuplicateCategory(String),

    #[error("word {0:?} is not in the vocabulary")]
    UnknownWord(String),

    #[error("Hadamard rows exhausted: row {index} requested from a {k}x{k} matrix")]
    HadamardExhausted { index: usize, k: usize },

    #[error("linear solve failed: {message} (condition estimate {condition:e})")]
    Solve { message: String, condition: f64 },

    #[error("chunk failed validation: {}", .0.join("; "))]
    InvalidChunk(Vec<String>),

    #[error("state error: {0}")]
    State(String),

    #[error("unsupported state format version {0}")]
    UnsupportedVersion(u32),

    #[error("checksum mismatch for blob {0}")]
    Checksum(String),

    #[error("no evaluable query: every query has zero relevant database items")]
    NoEvaluableQuery,

    #[error("{}: {source}", .path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format { .. } => "format",
            Error::Dimension(_) => "dimension",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonFinite { .. } => "non_finite",
            Error::UnlabeledInstance(_) => "unlabeled_instance",
            Error::DuplicateCategory(_) => "duplicate_category",
            Error::UnknownWord(_) => "unknown_word",
            Error::HadamardExhausted { .. } => "hadamard_exhausted",
            Error::Solve { .. } => "solve",
            Error::InvalidChunk(_) => "invalid_chunk",
            Error::State(_) => "state",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::Checksum(_) => "checksum",
            Error::NoEvaluableQuery => "no_evaluable_query",
            Error::File { .. } | Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
