use thiserror::Error;

pub type Result<T> = std::result::Result<T, LcmError>;

#[derive(Debug, Error)]
pub enum LcmError {
    #[error("{primitive}: shape mismatch ({detail})")]
    Shape { primitive: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("function is not deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("record {index}: unknown label {label:?}")]
    UnknownLabel { index: usize, label: String },

    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("missing parameter {0}")]
    MissingParameter(String),

    #[error("label {0:?} has a zero-norm representation")]
    ZeroNorm(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> LcmError {
    LcmError::InvalidArgument(msg.into())
}
