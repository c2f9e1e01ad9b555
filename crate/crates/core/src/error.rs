use std::path::PathBuf;

/// Error type shared by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("bad file format at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("training diverged (non-finite loss at iteration {iteration})")]
    Diverged { iteration: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps an I/O failure with the path it concerned.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
