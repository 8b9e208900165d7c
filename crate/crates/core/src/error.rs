//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any public operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Two-operand shape mismatch; names both shapes.
    #[error("{op}: shape mismatch, left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// A vector argument had the wrong length.
    #[error("{op}: expected length {expected}, got {got}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{0}: empty input")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid tree topology: {0}")]
    Topology(String),

    #[error("tree import: {0}")]
    TreeImport(String),

    #[error("tree export: {0}")]
    TreeExport(String),

    #[error("invalid label {label}: expected a class index below {classes}")]
    InvalidLabel { label: usize, classes: usize },

    #[error("model: {0}")]
    Model(String),

    #[error("{path} row {row}: {msg}")]
    Dataset { path: String, row: u64, msg: String },

    #[error("check failed: {0}")]
    Check(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
