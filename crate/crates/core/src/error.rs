use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate arrival measure: {0}")]
    DegenerateArrival(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge: requested {requested:e}, achieved {achieved:e}")]
    Quadrature { requested: f64, achieved: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sub-window does not cover the support of basis function s = {s}")]
    WindowCoverage { s: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
