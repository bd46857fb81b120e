use std::path::PathBuf;

/// Errors raised anywhere in the core pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A record in an input file could not be parsed or failed validation.
    #[error("row {row}: {message}")]
    Record { row: usize, message: String },

    #[error("no profile for observer `{0}`")]
    MissingProfile(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("degenerate map: {0}")]
    DegenerateMap(String),

    #[error("undefined reward: {0}")]
    UndefinedReward(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image encoding error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
