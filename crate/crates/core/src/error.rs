use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward called on a tensor that does not depend on any trainable input")]
    Detached,

    #[error("tensor handle belongs to a different graph")]
    ForeignVar,

    #[error("backward already ran on this graph; call zero_grad() before running it again")]
    BackwardTwice,

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("tensor extents {0:?} overflow the addressable element count")]
    ExtentOverflow(Vec<u64>),

    #[error("tensor has a zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stream of {available} {unit} is shorter than one window of {window}")]
    StreamTooShort {
        unit: &'static str,
        available: usize,
        window: usize,
    },

    #[error("video `{0}` has no subsequences")]
    EmptyVideo(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("AUC needs both classes, got {n_fake} fake and {n_real} real records")]
    SingleClass { n_fake: usize, n_real: usize },

    #[error("unknown sample id `{0}`")]
    UnknownSample(String),

    #[error("non-finite {term} loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        term: &'static str,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
