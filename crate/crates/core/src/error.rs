use std::fmt;

use thiserror::Error;

/// Logical tensor shape: rows `M`, columns `N` and channels `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Dims {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl Dims {
    pub const fn new(rows: usize, cols: usize, channels: usize) -> Self {
        Dims {
            rows,
            cols,
            channels,
        }
    }

    /// A flat vector stored as a single site with `len` channels.
    pub const fn vector(len: usize) -> Self {
        Dims::new(1, 1, len)
    }

    pub const fn len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.rows, self.cols, self.channels)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("index ({m}, {n}, {l}) out of bounds for {dims}")]
    OutOfBounds {
        m: usize,
        n: usize,
        l: usize,
        dims: Dims,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid model file: {0}")]
    Format(String),

    #[error("layer {index}: {reason}")]
    Validation { index: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
