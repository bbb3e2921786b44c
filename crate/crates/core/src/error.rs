use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimators, solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid target {0}: logistic loss expects labels in {{-1, +1}}")]
    InvalidTarget(f64),

    #[error(
        "solver did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})"
    )]
    Convergence {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("singular parameters: {0}")]
    SingularParameters(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{failed} of {total} experiment cells failed, above the 10% threshold")]
    TooManyFailures { failed: usize, total: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
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

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
