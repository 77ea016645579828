use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The document does not match the expected schema.
    #[error("parse error in `{field}`: {message}")]
    Parse { field: String, message: String },

    /// The document parsed but a model/clip invariant does not hold.
    #[error("validation error ({invariant}): {message}")]
    Validation { invariant: String, message: String },

    #[error("mocap: {0}")]
    Mocap(String),

    #[error("missing correspondence for robot keypoint `{0}`")]
    MissingCorrespondence(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite evaluation: {0}")]
    NonFinite(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(invariant: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            invariant: invariant.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
