//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor data length {len} does not match shape {shape:?}")]
    TensorShape { shape: Vec<usize>, len: usize },

    #[error("shape mismatch at layer {layer}: expected {expected:?}, got {found:?}")]
    ShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("layer {layer} ({kind}) is not supported by {op}")]
    UnsupportedLayer {
        op: &'static str,
        layer: usize,
        kind: String,
    },

    #[error("class index {index} out of range for {classes} classes")]
    ClassIndex { index: usize, classes: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("relevance set has no positive entry; the group-normalization divisor is undefined")]
    NoPositiveRelevance,

    #[error("relevance set is not group-normalized (global max {max}, expected 1)")]
    NotGroupNormalized { max: f32 },

    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("eigendecomposition failed to converge")]
    EigenFailure,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes: expected \"UAIX\"")]
    BadMagic,

    #[error("unsupported container version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("truncated container: entry {entry} is incomplete")]
    Truncated { entry: String },

    #[error("duplicate container entry {0:?}")]
    DuplicateEntry(String),

    #[error("container entry {entry}: {msg}")]
    BadEntry { entry: String, msg: String },

    #[error("config line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("missing config section [{0}]")]
    MissingSection(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("idx file {path}: {msg}")]
    Idx { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
