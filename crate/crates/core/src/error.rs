use thiserror::Error;

/// Errors raised by the attribution toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient samples: {distinct} distinct subsets cannot determine {needed} unknowns")]
    InsufficientSamples { distinct: usize, needed: usize },

    #[error("{what} = {value} exceeds the limit of {limit}")]
    TooLarge {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    /// Numeric failure: non-finite loss, divergence, singular systems.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than by the caller.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::InsufficientSamples { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
