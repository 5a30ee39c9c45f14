use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidModel(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("parameter length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("kernel matrix singular after {attempts} jitter attempts (last jitter {jitter:e})")]
    Singular { attempts: usize, jitter: f64 },

    #[error("parse error in {source_name} at {position}: {message}")]
    Parse {
        source_name: String,
        position: String,
        message: String,
    },

    #[error("missing results: {0}")]
    MissingResults(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(
        source_name: impl Into<String>,
        position: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            position: position.into(),
            message: message.into(),
        }
    }
}
