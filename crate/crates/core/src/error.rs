use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("step index {index} outside 1..={max}")]
    StepIndex { index: usize, max: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric divergence at {location}")]
    Numeric { location: String },

    #[error("malformed parse: {0}")]
    MalformedParse(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("caption does not match any template: {0:?}")]
    UnparseableCaption(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid feature statistics: {0}")]
    Stats(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training failed: {0}")]
    TrainingFailure(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
