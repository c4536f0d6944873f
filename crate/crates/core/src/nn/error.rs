use thiserror::Error;

/// Errors raised by the neural-network kernel.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("layer {index} ({kind}) cannot accept input shape {input:?}: {reason}")]
    ChainMismatch {
        index: usize,
        kind: &'static str,
        input: Vec<usize>,
        reason: String,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("activation cache does not match layer: {0}")]
    StaleCache(String),
    #[error("label {label} in row {row} is out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
