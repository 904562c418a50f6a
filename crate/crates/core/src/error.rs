use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bitwidth {0} (expected 1..=8)")]
    InvalidBitwidth(u8),

    #[error("value {value} at index {index} does not fit in {bits} bits")]
    OutOfRange { index: usize, value: i64, bits: u8 },

    #[error("shape {shape:?} describes {expected} elements but {actual} were given")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("packed tensor corrupt: {0}")]
    PackedFormat(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("empty tensor")]
    EmptyTensor,

    #[error("invalid nested combination INT({n}|{h})")]
    InvalidCombination { n: u8, h: u8 },

    #[error("strategy {0} is not supported here")]
    UnsupportedStrategy(String),

    #[error("recomposed value {value} at index {index} leaves the {bits}-bit range")]
    Corruption { index: usize, value: i64, bits: u8 },

    #[error("layer `{layer}`: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error("bad magic at offset {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: u64,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported format version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("truncated input: expected {expected} bytes, only {actual} available")]
    Truncated { expected: u64, actual: u64 },

    #[error("malformed container at offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("stored weight out of range in layer `{layer}`: {detail}")]
    RangeViolation { layer: String, detail: String },

    #[error("low-bit section is not present in this file")]
    LowSectionMissing,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid transition: {0}")]
    InvalidTransition(String),

    #[error("upgrade failed: {0}")]
    UpgradeFailed(String),

    #[error("ratio undefined: {0}")]
    UndefinedRatio(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("forward pass: {0}")]
    Mode(String),

    #[error("config: {0}")]
    Config(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("receiver rejected transfer: {0}")]
    Remote(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn in_layer(self, layer: &str) -> Error {
        Error::Layer {
            layer: layer.to_string(),
            source: Box::new(self),
        }
    }
}
