use alloc::string::String;

/// Errors produced anywhere in the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid rotation angle {0}: expected a nonzero multiple of 30 below 360")]
    InvalidAngle(u32),
    #[error("both classes must be present: {0}")]
    SingleClass(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("negative value {value} in feature column {column}")]
    NegativeFeature { column: usize, value: f64 },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
