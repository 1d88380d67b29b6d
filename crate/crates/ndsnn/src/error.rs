use std::fmt;

/// Error type shared across the crate.
#[derive(Debug)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    Dimension(String),
    /// A configuration value is invalid or inconsistent.
    Config(String),
    /// A k-selection asked for more elements than are available.
    Count(String),
    /// An iteration does not lie on the sparsity/death-rate schedule grid.
    Schedule(String),
    /// Recorded forward state does not match the network it is replayed against.
    State(String),
    /// Dataset contents violate their contract (bad label, count mismatch).
    Data(String),
    /// A serialized artifact is malformed; offset points at the first bad byte.
    Format { message: String, offset: u64 },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Count(m) => write!(f, "count error: {m}"),
            Error::Schedule(m) => write!(f, "schedule error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Format { message, offset } => {
                write!(f, "format error at offset {offset}: {message}")
            }
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
