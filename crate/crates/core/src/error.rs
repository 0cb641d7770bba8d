use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solver stack.
///
/// The variants are grouped by how a caller should react: `Input` and
/// `Config` are user mistakes (CLI exit code 1), `Numerical` means the
/// computation itself broke down (exit code 2).
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("projection did not converge after {iterations} iterations (residual {residual:.3e})")]
    ProjectionNotConverged { iterations: usize, residual: f64 },

    #[error("regression failed: {0}")]
    Regression(String),

    #[error("non-finite value at step {step}, path {path}: {what}")]
    NonFinite {
        step: usize,
        path: usize,
        what: &'static str,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
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

    /// Numerical failures (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ProjectionNotConverged { .. } | Error::Regression(_) | Error::NonFinite { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
