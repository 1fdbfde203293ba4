use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the decomposition pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot load image {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("cannot save image {path}: {reason}")]
    Save { path: PathBuf, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{width}x{height} image is smaller than the {window}x{window} window")]
    WindowTooLarge {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("solver diverged at iteration {iteration}: non-finite value in {field}")]
    Divergence { iteration: usize, field: &'static str },

    #[error("malformed weight table: {0}")]
    WeightFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_same_grid(
    what: &str,
    (w0, h0): (usize, usize),
    (w1, h1): (usize, usize),
) -> Result<()> {
    if (w0, h0) != (w1, h1) {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {w0}x{h0} vs {w1}x{h1}"
        )));
    }
    Ok(())
}
