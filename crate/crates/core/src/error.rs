use std::io;

use thiserror::Error;

/// Errors produced by the tracking library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed V4D header: {0}")]
    Header(String),

    #[error("payload size mismatch: header declares {expected} elements, payload holds {actual} bytes")]
    PayloadSize { expected: usize, actual: usize },

    #[error("dtype mismatch: expected {expected}, found {found}")]
    Dtype { expected: String, found: String },

    #[error("invalid dimensions: {0}")]
    Dims(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("feature channel count {found} differs from dataset channel count {expected}")]
    Channels { expected: usize, found: usize },

    #[error("non-finite value at linear index {0}")]
    NonFinite(usize),

    #[error("empty object")]
    EmptyObject,

    #[error("script error: {0}")]
    Script(String),

    #[error("ground truth error: {0}")]
    GroundTruth(String),

    #[error("inconsistent track state: {0}")]
    Inconsistent(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
