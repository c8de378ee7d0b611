use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis `{axis}`: expected {expected}, got {actual}")]
    Dimension {
        op: String,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("non-finite value produced at `{location}`")]
    NonFinite { location: String },

    #[error("{op}: batch is empty in training mode")]
    EmptyBatch { op: &'static str },

    #[error("{op}: spatial dims {h}x{w} must be even")]
    OddSpatial { op: &'static str, h: usize, w: usize },

    #[error("input spatial dims {h}x{w} are not divisible by {divisor}")]
    NotDivisible { h: usize, w: usize, divisor: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("tensor shape mismatch for: {}", names.join(", "))]
    ShapeMismatch { names: Vec<String> },

    #[error("missing tensors: {}", names.join(", "))]
    MissingTensors { names: Vec<String> },

    #[error("point ({x}, {y}) lies outside the {width}x{height} image")]
    PointOutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("bce target {value} at index {index} is not 0 or 1")]
    InvalidTarget { index: usize, value: f64 },

    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Failures while decoding one of the on-disk formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported {format} version {found} (expected {expected})")]
    Version {
        format: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("{format}: truncated while reading {context}")]
    Truncated {
        format: &'static str,
        context: String,
    },

    #[error("{format}: {count} trailing bytes after payload")]
    TrailingBytes { format: &'static str, count: usize },

    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),

    #[error("duplicate tensor `{0}`")]
    DuplicateTensor(String),

    #[error("{format}: invalid field: {reason}")]
    Invalid {
        format: &'static str,
        reason: String,
    },

    #[error("{format} line {line}: {reason}")]
    Parse {
        format: &'static str,
        line: usize,
        reason: String,
    },

    #[error("unknown config key `{key}` on line {line}")]
    UnknownKey { key: String, line: usize },
}
