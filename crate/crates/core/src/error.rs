use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Non-finite or otherwise malformed input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Problem size exceeds what exact enumeration supports.
    #[error("size error: {0}")]
    Size(String),

    /// An iterative solver did not reach its tolerance.
    #[error("convergence error: {0}")]
    Convergence(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn size(msg: impl Into<String>) -> Self {
        Error::Size(msg.into())
    }

    /// True for errors caused by the caller's arguments, as opposed to
    /// solver failures.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Convergence(_))
    }
}
