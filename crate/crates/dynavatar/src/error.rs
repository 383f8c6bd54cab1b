use std::path::PathBuf;

/// Crate-wide error type.
///
/// The variant split mirrors the CLI contract: `MissingInput` / `InvalidInput`
/// map to exit code 2, everything else to exit code 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for missing/invalid inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingInput(_) | Error::InvalidInput(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
