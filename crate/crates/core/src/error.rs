use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: trace contains no syscalls")]
    EmptyTrace { path: PathBuf },

    #[error("{path}: invalid token {token:?} at token index {index}")]
    Parse {
        path: PathBuf,
        token: String,
        index: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing directory {0}")]
    MissingDirectory(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("too few samples: {0}")]
    TooFewSamples(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("client {0} has an empty shard")]
    EmptyShard(usize),

    #[error("trace {0} is shorter than the window length")]
    NoWindows(String),

    #[error("unsupported bundle schema version {0}")]
    UnsupportedSchema(u64),

    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the input data rather than by the program.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidConfig(_))
    }
}
