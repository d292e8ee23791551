use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator, its diagnostics and the sweep drivers.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on shapes or times was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A model or scheme parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("linear solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    SolverDivergence { residual: f64, iterations: usize },

    #[error("integration blew up (non-finite value) at t = {t}")]
    Blowup { t: f64 },

    #[error("rate fit needs at least 4 usable points, got {usable}")]
    FitInsufficient { usable: usize },

    #[error("sweep aborted after {} completed rows: {source}", partial.len())]
    SweepAborted {
        partial: Vec<crate::experiments::RateRow>,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
