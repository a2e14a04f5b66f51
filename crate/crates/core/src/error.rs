use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An operation produced NaN or infinity.
    #[error("numeric failure in `{op}`: non-finite value")]
    NumericFailure { op: &'static str },

    /// A precondition on shapes, lengths or argument ranges was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Frame evaluation found no pixel inside the evaluation mask.
    #[error("empty evaluation mask")]
    EmptyMask,

    /// A sequence-level metric is not defined for the given record.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Scene generation could not satisfy the domain specification.
    #[error("generation failed: {0}")]
    Generation(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract(alloc::format!($($arg)*))
    };
}
pub(crate) use contract;
