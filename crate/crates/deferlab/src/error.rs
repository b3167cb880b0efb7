use std::path::PathBuf;

/// Crate-wide error type. Variants map onto the CLI's exit codes
/// (config = 2, data = 3, numeric = 4).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data format error: {0}")]
    Data(String),

    #[error("data format error in {path} row {row}: {message}")]
    ParseRow {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("episode lifecycle error: {0}")]
    Lifecycle(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Lifecycle(_) => 2,
            Error::Data(_) | Error::ParseRow { .. } | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
