//! Crate-wide error type.

use std::fmt;
use std::io;

#[derive(Debug)]
pub enum Error {
    /// A stimulus spec that cannot be generated (e.g. square larger than frame).
    Spec(String),
    /// Clip sampling preconditions violated (e.g. clip too short for the gap range).
    Sampling(String),
    /// A caller broke an API contract (non-scalar loss, duplicate grid slot, ...).
    Contract(String),
    /// Config file / override parsing.
    Parse(String),
    /// Checkpoint encoding or decoding.
    Checkpoint(String),
    /// A loss or state went NaN/Inf where finite values are required.
    NonFinite(String),
    /// Evaluation errors (zero stability baseline, empty inputs, ...).
    Eval(String),
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Spec(m) => write!(f, "spec error: {m}"),
            Error::Sampling(m) => write!(f, "sampling error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::Parse(m) => write!(f, "parse error: {m}"),
            Error::Checkpoint(m) => write!(f, "checkpoint error: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Eval(m) => write!(f, "eval error: {m}"),
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

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
