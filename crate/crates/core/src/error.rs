use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("{} sample id(s) have no caption: {}", .0.len(), .0.join(", "))]
    MissingCaptions(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing configuration key `{0}`")]
    MissingKey(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("class {class}: {message}")]
    Sampling { class: usize, message: String },

    #[error(
        "episode construction failed for class {class} after {attempts} attempt(s); \
         last pair ({first}, {second}): {reason}"
    )]
    EpisodeBudget {
        class: usize,
        attempts: usize,
        first: usize,
        second: usize,
        reason: String,
    },

    #[error("non-finite values encountered: {0}")]
    Divergence(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit status for this error: 1 usage, 2 data, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MissingKey(_) => 1,
            Error::Divergence(_) => 3,
            _ => 2,
        }
    }
}
