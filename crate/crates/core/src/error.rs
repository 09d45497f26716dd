use alloc::string::String;

/// Failure modes shared by every module in the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Shapes, counts, indices or other structural preconditions were violated.
    #[error("structural error: {0}")]
    Structural(String),
    /// A NaN or infinity showed up where a finite value is required.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A hyperparameter combination cannot be honoured.
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! structural {
    ($($arg:tt)*) => { $crate::error::Error::Structural(alloc::format!($($arg)*)) };
}

macro_rules! numeric {
    ($($arg:tt)*) => { $crate::error::Error::Numeric(alloc::format!($($arg)*)) };
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}

pub(crate) use {config_err, numeric, structural};
