use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("peephole mismatch: gate {has} a peephole but peephole state was {supplied}")]
    PeepholeMismatch {
        has: &'static str,
        supplied: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("frame states do not match the network: {0}")]
    StateMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("trace mismatch: {0}")]
    TraceMismatch(String),

    #[error("non-finite gradient in {0}; step refused")]
    NonFiniteGradient(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint is not a model file (bad magic)")]
    BadMagic,

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("{path}:{line}: {msg}")]
    ConfigFile {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("pipeline worker failed: {0}")]
    Worker(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::DimensionMismatch { op, left, right }
    }
}
