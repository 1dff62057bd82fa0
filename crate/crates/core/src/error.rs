use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("root bin has no parent")]
    RootHasNoParent,

    #[error("round {round} out of range 1..={horizon}")]
    RoundOutOfRange { round: u64, horizon: u64 },

    #[error("arm {arm} out of range for {arms} arms")]
    ArmOutOfRange { arm: usize, arms: usize },

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("level mismatch: bin at level {bin_level}, interval requires level {expected}")]
    LevelMismatch { bin_level: u32, expected: u32 },

    #[error("oracle good-arm set emptied at round {round} before the next shift")]
    OracleExhausted { round: u64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
