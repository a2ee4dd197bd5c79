use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Error, Debug)]
pub enum Error {
    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A symmetric matrix expected to be positive definite was not; carries
    /// the offending pivot so Gram factorization failures can be diagnosed.
    #[error("matrix not positive definite at index {index} (pivot {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// The objective returned a non-finite value at the given point.
    #[error("non-finite objective value at theta = {theta:?}")]
    NonFiniteObjective { theta: Vec<f64> },

    /// An iterative numeric procedure failed to converge or produced an
    /// unusable result.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The model does not provide the requested optional capability.
    #[error("model does not support {0}")]
    Unsupported(&'static str),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
