use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no retinal foreground detected")]
    NoForeground,
    #[error("degenerate radius: no column of the middle row exceeds a tenth of the row mean")]
    DegenerateRadius,

    #[error("prediction vector has zero norm")]
    DegenerateNorm,
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("expected agreement is 1; kappa is undefined")]
    DegenerateMarginals,

    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid class pair ({a}, {b})")]
    InvalidPair { a: usize, b: usize },
    #[error("dataset root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("class directory \"{0}\" is missing")]
    MissingClassDir(String),
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for the preprocessing failures that mean "this is not a usable
    /// fundus photograph" rather than an I/O or programming fault.
    pub fn is_preprocess_rejection(&self) -> bool {
        matches!(self, Error::NoForeground | Error::DegenerateRadius)
    }
}
