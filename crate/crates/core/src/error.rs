//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// One or more configuration invariants failed. Carries every
    /// violation found, not just the first.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("KV cache capacity exceeded: {have} cached, capacity {cap}")]
    CacheFull { have: usize, cap: usize },

    #[error("KV cache is empty")]
    CacheEmpty,

    #[error("weight file error: {0}")]
    WeightFormat(String),

    #[error("ring gather error: {0}")]
    Ring(String),

    /// A self-check (brute-force cross-check, cross-node equivalence,
    /// accuracy bound) found a discrepancy.
    #[error("verification failed: {0}")]
    Verify(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }
}
