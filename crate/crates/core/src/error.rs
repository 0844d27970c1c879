use std::io;

use thiserror::Error;

/// Errors raised across the registration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's preconditions (shapes, lifecycle, ranges).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A checked-mode numeric domain error, e.g. `log` of a non-positive value.
    #[error("domain error: {0}")]
    Domain(String),
    /// NaN or infinity reached a place that requires finite values.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// Malformed binary input.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use contract;
