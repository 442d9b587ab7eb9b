use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Each variant maps onto one stable category name (see [`Error::category`]),
/// which the command-line front end prints as `error: <category>: ...`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("factorization failed at pivot {pivot} (value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("{0}")]
    Numerical(String),

    #[error("{0}")]
    Logic(String),

    #[error("malformed image at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => "argument",
            Error::NotPositiveDefinite { .. } | Error::Numerical(_) => "numerical",
            Error::Logic(_) => "logic",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
