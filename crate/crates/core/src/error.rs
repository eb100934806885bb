use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mu must lie in (0, 3), got {0}")]
    InvalidMu(f64),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field is identically zero")]
    ZeroField,

    #[error("fields live on different grids")]
    DomainMismatch,

    #[error("Picard iteration did not converge after {iterations} iterations (last relative change {last_change:e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("invalid lambda bracket: {0}")]
    BracketInvalid(String),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("checkpoint {path}: bad magic bytes {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("checkpoint {path}: format version {found} is not supported (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("checkpoint {path}: truncated, expected {expected} bytes but found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
