use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid layer sizes: {0}")]
    InvalidLayerSizes(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid interval on dimension {dim}: [{lo}, {hi}]")]
    InvalidInterval { dim: usize, lo: f64, hi: f64 },

    #[error("split point {point} is not strictly inside ({lo}, {hi}) on dimension {dim}")]
    InvalidSplit { dim: usize, point: f64, lo: f64, hi: f64 },

    #[error("unknown goal region {0}")]
    UnknownRegion(u32),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("metrics sink failed: {0}")]
    Sink(String),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
