use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 2.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] nlretinex::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("no files in common between {enhanced} and {gt}")]
    NoCommonFiles { enhanced: PathBuf, gt: PathBuf },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error when it aborts a whole run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::NoCommonFiles { .. } => 2,
            _ => 1,
        }
    }
}
