use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("length-ratio filter needs at least {min} pairs, got {found}")]
    TooFewPairs { found: usize, min: usize },
    #[error("{0}")]
    Config(String),
    #[error("lexicon error: {0}")]
    Lexicon(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Engine(#[from] npov_autograd::Error),
    #[error(transparent)]
    Checkpoint(#[from] npov_autograd::checkpoint::CheckpointError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
