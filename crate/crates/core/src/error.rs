use alloc::string::String;
use core::fmt;

/// Failure kinds shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tensor extents that do not fit the operation.
    Shape(String),
    /// A call made outside an operation's preconditions.
    Contract(String),
    /// Invalid model, backbone or training configuration.
    Config(String),
    /// Malformed labels or predictions.
    Data(String),
    /// Training diverged (non-finite loss or gradient).
    Training(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Contract(msg) => write!(f, "contract error: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Training(msg) => write!(f, "training error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(alloc::format!($($arg)*))
    };
}

macro_rules! ensure {
    ($cond:expr, $err:expr) => {
        if !$cond {
            return Err($err);
        }
    };
}

pub(crate) use ensure;
pub(crate) use shape_err;
