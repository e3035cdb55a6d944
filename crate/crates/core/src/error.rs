use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures while reading or validating a JLF Jacobian file.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected UINFJAC1")]
    Magic,
    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("header/payload size disagreement: {0}")]
    SizeMismatch(String),
    #[error("invalid header: {0}")]
    Header(String),
    #[error("invalid kept-index list for layer {layer}: {reason}")]
    Indices { layer: String, reason: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is singular: {0}")]
    Singular(String),
    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("kernel has a negative eigenvalue {value:e} beyond roundoff (max {max:e})")]
    NegativeEigenvalue { value: f64, max: f64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: i64, classes: usize },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("jacobian file: {0}")]
    Format(#[from] FormatError),
    #[error("unstable step size: {0}")]
    Unstable(String),
    #[error("gradient descent diverged after {step} steps")]
    Diverged { step: usize },
    #[error("leave-one-out failed for samples {0:?}")]
    LooFailures(Vec<(usize, String)>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Numerical failures, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::NotPositiveDefinite { .. }
                | Error::NegativeEigenvalue { .. }
                | Error::Unstable(_)
                | Error::Diverged { .. }
                | Error::LooFailures(_)
        )
    }
}

pub(crate) fn ensure_dim(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(what()))
    }
}
