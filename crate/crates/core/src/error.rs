use alloc::boxed::Box;
use alloc::string::String;

use thiserror::Error;

use crate::training::TrainHistory;

/// Errors raised while decoding an EMB1 container.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}, expected \"EMB1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("header truncated: {0} bytes, need 20")]
    TruncatedHeader(usize),
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("sample count must be positive")]
    ZeroCount,
    #[error("declared count x dim overflows the addressable size")]
    SizeOverflow,
    #[error("payload truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("payload has {actual} bytes, expected {expected}")]
    TrailingBytes { expected: u64, actual: u64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        history: Box<TrainHistory>,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}

macro_rules! invalid_arg {
    ($($arg:tt)*) => { $crate::error::Error::InvalidArgument(alloc::format!($($arg)*)) };
}

pub(crate) use invalid_arg;
pub(crate) use shape_err;
