//! Crate-wide error type.

use std::fmt;

/// Errors produced by graph construction, numerics, and I/O.
#[derive(Debug)]
pub enum Error {
    /// A caller-supplied value violates an operation's preconditions.
    InvalidArgument(String),
    /// A configuration (architecture string, flag combination, shape
    /// mismatch against a checkpoint) cannot be realized.
    Config(String),
    /// An iterative numeric routine failed or a non-finite value appeared.
    NumericalFailure {
        context: String,
        /// Residual magnitude for convergence failures, when meaningful.
        residual: Option<f64>,
    },
    /// A coarsening level failed to reduce the vertex count.
    CoarseningStall { level: usize, n: usize },
    /// A file does not conform to its expected binary/text layout.
    Format {
        message: String,
        /// Byte offset of the violation, when known.
        offset: Option<u64>,
    },
    Io(std::io::Error),
}

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(context: impl Into<String>, residual: Option<f64>) -> Self {
        Error::NumericalFailure {
            context: context.into(),
            residual,
        }
    }

    pub fn format(message: impl Into<String>, offset: Option<u64>) -> Self {
        Error::Format {
            message: message.into(),
            offset,
        }
    }

    /// Process exit code class: 1 usage/config, 2 numerical, 3 I/O or format.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::CoarseningStall { .. } => 1,
            Error::NumericalFailure { .. } => 2,
            Error::Format { .. } | Error::Io(_) => 3,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::NumericalFailure { context, residual } => match residual {
                Some(r) => write!(f, "numerical failure in {context} (residual {r:.3e})"),
                None => write!(f, "numerical failure in {context}"),
            },
            Error::CoarseningStall { level, n } => {
                write!(f, "coarsening stalled at level {level}: {n} vertices did not reduce")
            }
            Error::Format { message, offset } => match offset {
                Some(o) => write!(f, "format error at byte {o}: {message}"),
                None => write!(f, "format error: {message}"),
            },
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
