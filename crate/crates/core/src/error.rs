//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("data length {got} does not fill shape {shape:?} ({expected} elements)")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("tensor order {got} exceeds the supported maximum of {max}")]
    Order { got: usize, max: usize },

    #[error("{op}: {msg}")]
    BadArgument { op: &'static str, msg: String },

    #[error("{op}: degenerate input, {msg}")]
    Degenerate { op: &'static str, msg: String },

    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn bad(op: &'static str, msg: impl Into<String>) -> Self {
        Error::BadArgument { op, msg: msg.into() }
    }

    pub fn degenerate(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Degenerate { op, msg: msg.into() }
    }

    /// Stable machine-readable code, used by the CLI's structured stderr.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::DataLength { .. } => "data_length",
            Error::Order { .. } => "tensor_order",
            Error::BadArgument { .. } => "bad_argument",
            Error::Degenerate { .. } => "degenerate_input",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
