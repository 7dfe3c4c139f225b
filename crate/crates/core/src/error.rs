use std::io;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("block `{block}` is truncated: expected {expected} bytes, found {found}")]
    Truncated {
        block: String,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entries in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("sparsity budget {budget} out of range [1, {max}]")]
    BudgetOutOfRange { budget: usize, max: usize },

    #[error("non-positive regularization weight {0}")]
    NonPositiveLambda(f64),

    #[error("training batch is empty after filtering")]
    EmptyBatch,

    #[error("pixel ({row}, {col}) is not covered by any patch")]
    UncoveredPixel { row: usize, col: usize },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("atom {0} has zero norm")]
    ZeroAtom(usize),

    #[error("signal has zero power")]
    ZeroPower,
}

pub type Result<T> = std::result::Result<T, Error>;
