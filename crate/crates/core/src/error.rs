use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or arguments.
    Usage,
    /// Input data or stored index content is invalid.
    Data,
    /// The operating system refused a read or write.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("unidentified base {0:?}")]
    UnidentifiedBase(char),

    #[error("input contains no A/C/G/T bases")]
    EmptySequence,

    #[error("sequence exceeds the maximum of {max} bases")]
    SequenceTooLong { max: u64 },

    #[error("position {pos} out of range for sequence of length {len}")]
    OutOfRange { pos: u64, len: u64 },

    #[error("memory budget must be positive")]
    InvalidBudget,

    #[error("prefix length {0} is outside the supported range 1..={max}", max = crate::partition::MAX_PREFIX_LEN)]
    InvalidPrefixLength(u32),

    #[error("spill file {path}: {source}")]
    SpillIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed spill file {path}: {reason}")]
    CorruptSpill { path: PathBuf, reason: String },

    #[error("chunk needs {requested} bytes but the grant is {grant} bytes")]
    AllocationFailure { requested: u64, grant: u64 },

    #[error("suffix {pos} coincides with an existing suffix")]
    DuplicateSuffix { pos: u32 },

    #[error("corrupt chunk {path}: {reason}")]
    CorruptChunk { path: PathBuf, reason: String },

    #[error("no manifest in {0}")]
    MissingManifest(PathBuf),

    #[error("malformed manifest line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },

    #[error("manifest names chunk {path} which cannot be loaded: {reason}")]
    MissingChunk { path: PathBuf, reason: String },

    #[error("sample windows of {0} bases are too small to estimate the expansion factor")]
    SampleTooSmall(u64),

    #[error("partition {partition} needs {bytes} bytes, more than the budget of {budget}")]
    PartitionTooLarge { partition: u32, bytes: u64, budget: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid pattern {pattern:?}: {reason}")]
    InvalidPattern { pattern: String, reason: String },

    #[error("index sequence does not match the manifest: {0}")]
    SequenceMismatch(String),

    #[error("building partition {partition} failed: {source}")]
    Worker {
        partition: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidBudget
            | Error::InvalidPrefixLength(_)
            | Error::Config(_)
            | Error::SampleTooSmall(_) => ErrorKind::Usage,
            Error::Io { .. } | Error::SpillIo { .. } => ErrorKind::Io,
            Error::Worker { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
