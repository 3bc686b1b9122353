use std::io;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants group into I/O and format problems, invalid inputs, and numeric
/// failures; [`Error::is_numeric`] lets callers tell the last group apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("truncated data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid synthetic lesion spec: {0}")]
    InvalidSpec(String),
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate crop: {rows}x{cols}")]
    DegenerateCrop { rows: usize, cols: usize },
    #[error("pixel value {value} at index {index} is outside [0, 1]")]
    OutOfDomain { index: usize, value: f64 },
    #[error("zero-norm embedding at index {0}")]
    ZeroVector(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("batch of {0} rows is too small for batch statistics")]
    BatchTooSmall(usize),
    #[error("label {label} is out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("inconsistent channels at layer {layer}: expected {expected}, found {found}")]
    InconsistentChannels {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("confusion table is empty")]
    EmptyConfusion,
    #[error("scores contain a single class")]
    SingleClass,
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// True for failures of the arithmetic itself rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::ZeroVector(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
