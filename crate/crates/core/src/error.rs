use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarsError {
    /// A precondition on shapes, indices or parameters was violated.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Non-finite values or a failed numerical kernel.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Malformed file contents.
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MarsError>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::MarsError::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
