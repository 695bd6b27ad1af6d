use std::path::PathBuf;

/// Errors raised by the laboratory. Variants are deliberately fine-grained so
/// callers (and the CLI exit-code mapping) can tell input problems apart from
/// numerical failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid attack spec: {0}")]
    InvalidSpec(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("layer {0} has no fan-out (it is the output layer)")]
    NoFanout(usize),

    #[error("pruning would leave layer {0} empty")]
    EmptyLayer(usize),

    #[error("checkpoint has bad magic bytes")]
    BadMagic,

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint is truncated")]
    Truncated,

    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),

    #[error("dataset file {path} has {len} bytes, expected {expected}")]
    WrongFileSize { path: PathBuf, len: u64, expected: String },

    #[error("non-finite loss at {0}")]
    NonFiniteLoss(String),

    #[error("optimization diverged: {0}")]
    Diverged(String),

    #[error("degenerate node: {0}")]
    DegenerateNode(String),

    #[error("zero variance input")]
    ZeroVariance,

    #[error("unknown {kind} '{name}'")]
    UnknownStrategy { kind: &'static str, name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::ShapeMismatch { expected: expected.into(), got: got.into() }
}
