use thiserror::Error;

/// Errors produced by the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("conjugate gradient diverged at iteration {iteration}: non-finite value")]
    Divergence { iteration: usize },

    #[error("non-finite loss encountered at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("parameter `{0}` is frozen")]
    Frozen(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("checkpoint parameter `{name}`: {message}")]
    Checkpoint { name: String, message: String },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Error {
    Error::Dimension {
        expected: format!("{expected:?}"),
        actual: format!("{actual:?}"),
    }
}

pub(crate) fn param_err(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
