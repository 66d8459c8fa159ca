//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad dimensions, unknown names, out-of-range values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Shape mismatch between tensors, masks, or parameter entries.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Non-finite values where finite arithmetic is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed input data; carries the offending row when known.
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    /// Evaluation on empty or incomplete inputs.
    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("empty forget set: {0}")]
    EmptyForget(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
