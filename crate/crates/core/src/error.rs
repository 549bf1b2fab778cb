use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("codebook: {0}")]
    Codebook(String),

    #[error("config: {0}")]
    Config(String),

    #[error("non-finite {0}")]
    NonFinite(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Nn(#[from] gfscma_nn::NnError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { context, expected, got })
    }
}
