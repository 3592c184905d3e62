use std::path::PathBuf;

/// Errors reported by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("invalid config at `{path}`: {message}")]
    InvalidConfig { path: String, message: String },

    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("invalid features: {0}")]
    InvalidFeatures(String),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
