use std::fmt;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("spatial size {height}x{width} is not divisible by group size {group_size}")]
    IndivisibleSpatial {
        height: usize,
        width: usize,
        group_size: usize,
    },

    #[error("indicator entry {index} is {value}, expected exactly 0 or 1")]
    NonBinaryIndicator { index: usize, value: f64 },

    #[error("label {label} at pixel {pixel} is outside [0, {classes}) and is not the ignore index")]
    LabelOutOfRange {
        label: u8,
        pixel: usize,
        classes: usize,
    },

    #[error("backward requires a scalar loss, got shape {0}")]
    NotScalar(Shape),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: Names,
    },

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Comma-joined list of names, used in registry lookup errors.
#[derive(Debug, Clone)]
pub struct Names(pub Vec<String>);

impl fmt::Display for Names {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(", "))
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
