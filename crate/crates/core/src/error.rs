use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("backward called on a tape that was already consumed")]
    TapeConsumed,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("optimizer state was never initialized")]
    OptimizerUninitialized,

    #[error("bad IDX magic 0x{0:08x}")]
    BadMagic(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("dimension overflow in IDX header")]
    DimensionOverflow,

    #[error("unsupported checkpoint version {0}")]
    Version(u16),

    #[error("checkpoint fingerprint mismatch: {0}")]
    Fingerprint(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable reason code.
    pub fn reason(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Validation(_) => "validation",
            Error::NonFinite { .. } => "non-finite",
            Error::Divergence(_) => "divergence",
            Error::TapeConsumed => "tape-consumed",
            Error::NonScalarLoss(_) => "non-scalar-loss",
            Error::OptimizerUninitialized => "optimizer-uninitialized",
            Error::BadMagic(_) => "bad-magic",
            Error::Truncated { .. } => "truncated",
            Error::DimensionOverflow => "dimension-overflow",
            Error::Version(_) => "bad-version",
            Error::Fingerprint(_) => "fingerprint-mismatch",
            Error::Format(_) => "malformed",
            Error::Io { .. } => "io",
        }
    }

    /// True for failures caused by malformed files rather than I/O or numerics.
    pub fn is_format(&self) -> bool {
        matches!(
            self,
            Error::BadMagic(_)
                | Error::Truncated { .. }
                | Error::DimensionOverflow
                | Error::Version(_)
                | Error::Fingerprint(_)
                | Error::Format(_)
        )
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Divergence(_))
    }
}
