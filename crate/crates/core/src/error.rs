use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the compression, storage and merging pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("module `{module}`: expected length {expected}, found {found}")]
    ShapeMismatch {
        module: String,
        expected: usize,
        found: usize,
    },

    #[error("module mismatch at position {position}: expected `{expected}`, found `{found}`")]
    ModuleMismatch {
        position: usize,
        expected: String,
        found: String,
    },

    #[error("module count mismatch: expected {expected}, found {found}")]
    ModuleCount { expected: usize, found: usize },

    #[error("invalid parameter set: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Codec(#[from] CodecError),

    #[error("variable does not belong to this tape")]
    ForeignVariable,

    #[error("training diverged at step {step}: {snapshot}")]
    Diverged { step: usize, snapshot: String },

    #[error("config: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Failures specific to the bitstream and container formats.
#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("element count {0} does not fit in 27 bits")]
    Capacity(usize),

    #[error("group size {group} must divide {n} and lie in 1..=256")]
    BadGroup { group: usize, n: usize },

    #[error("unsupported bit-width {0}")]
    BadBitWidth(u32),

    #[error("element {position}: value {value} is not a bin center")]
    NotOnBinCenter { position: usize, value: f64 },

    #[error("element {position}: bin {bin} out of range for {bits}-bit quantizer")]
    BinOutOfRange {
        position: usize,
        bin: u32,
        bits: u32,
    },

    #[error("position {position} out of range for module of length {n}")]
    PositionOutOfRange { position: usize, n: usize },

    #[error("survivor positions must be strictly increasing (at {0})")]
    Unsorted(usize),

    #[error("corrupt stream at bit {offset}: {reason}")]
    Corrupt { offset: usize, reason: &'static str },

    #[error("truncated stream at bit {offset}")]
    Truncated { offset: usize },

    #[error("bad container: {0}")]
    Container(String),
}
