use std::path::PathBuf;

/// Crate-wide error type. Validation errors cover bad inputs and
/// configuration; the remaining variants carry enough context to be
/// actionable from a batch log.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("training: {0}")]
    Training(String),

    #[error("transport failure for instance {instance_id}: {message}")]
    Transport {
        instance_id: String,
        message: String,
    },

    #[error("unparseable model response ({reason}): {raw:?}")]
    ResponseParse { reason: String, raw: String },

    #[error("evaluation: {0}")]
    Eval(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
