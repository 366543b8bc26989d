use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("{0}: sequence must not be empty")]
    EmptySequence(&'static str),

    #[error("inconsistent state: {0}")]
    Consistency(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("requested {target} frames but the video only has {frames}")]
    InsufficientFrames { frames: usize, target: usize },

    #[error("{path}: bad magic {found:?} (expected {expected:?})")]
    Format {
        path: PathBuf,
        found: String,
        expected: &'static str,
    },

    #[error("{path}: unsupported format version {version}")]
    Version { path: PathBuf, version: u32 },

    #[error("{path}: corrupt file: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    Manifest { path: PathBuf, line: usize, reason: String },

    #[error("duplicate video id {0:?}")]
    DuplicateId(String),

    #[error("missing feature files: {}", .0.join(", "))]
    MissingFiles(Vec<String>),

    #[error("split scheme {scheme}: {reason}")]
    Scheme { scheme: String, reason: String },

    #[error("sample {video_id}: {source}")]
    Sample {
        video_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Coarse classification used by front-ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Scheme { .. } => ErrorKind::Config,
            Error::Format { .. }
            | Error::Version { .. }
            | Error::Corruption { .. }
            | Error::Manifest { .. }
            | Error::DuplicateId(_)
            | Error::MissingFiles(_)
            | Error::InsufficientFrames { .. }
            | Error::Io { .. } => ErrorKind::Data,
            Error::Sample { source, .. } => match source.kind() {
                ErrorKind::Runtime => ErrorKind::Data,
                k => k,
            },
            Error::Dimension { .. } | Error::Index { .. } | Error::EmptySequence(_) | Error::Consistency(_) => {
                ErrorKind::Runtime
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}
