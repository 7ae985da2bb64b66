use thiserror::Error;

/// Errors raised by the numeric kernel.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{0}` registered twice")]
    DuplicateParameter(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss value {0}")]
    NonFiniteLoss(f64),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
