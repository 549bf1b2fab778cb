use thiserror::Error;

/// Errors raised by the network engine.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("non-finite value produced by `{0}`")]
    NonFinite(String),

    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),

    #[error("tape does not match the network it is replayed against")]
    TapeMismatch,

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("invalid learning rate {0}")]
    LearningRate(f64),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn shape_err(context: &str, expected: impl ToString, got: impl ToString) -> NnError {
    NnError::Shape {
        context: context.to_string(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
