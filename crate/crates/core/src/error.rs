use std::fmt;

use thiserror::Error;

/// Spatial axis a dimension relation was checked on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::Rows => f.write_str("rows"),
            Axis::Cols => f.write_str("cols"),
        }
    }
}

/// A violated size relation, carrying the numbers that took part in it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Relation {
    /// `kernel <= extent` failed.
    KernelExceedsInput { extent: usize, kernel: usize },
    /// `(extent - kernel) mod stride == 0` failed.
    StrideMisfit {
        extent: usize,
        kernel: usize,
        stride: usize,
        remainder: usize,
    },
    /// `conv_out mod pool == 0` failed.
    PoolMisfit {
        extent: usize,
        kernel: usize,
        conv_out: usize,
        pool: usize,
    },
    /// `extent mod pool == 0` failed for a feature map fed to pooling.
    PoolDivides { extent: usize, pool: usize },
    /// Stride must satisfy `1 <= stride <= kernel`.
    StrideRange { kernel: usize, stride: usize },
    /// Rank bound must satisfy `1 <= rank <= min(rows, cols)` of the factor matrix.
    RankRange {
        rank: usize,
        rows: usize,
        cols: usize,
        max: usize,
    },
    /// Two shapes that must agree do not.
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    /// A count that must be positive is zero.
    Zero { what: &'static str },
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Relation::KernelExceedsInput { extent, kernel } => {
                write!(f, "kernel {kernel} larger than input extent {extent}")
            }
            Relation::StrideMisfit {
                extent,
                kernel,
                stride,
                remainder,
            } => write!(
                f,
                "({extent}-{kernel}) = {} not divisible by stride {stride} (remainder {remainder})",
                extent - kernel
            ),
            Relation::PoolMisfit {
                extent,
                kernel,
                conv_out,
                pool,
            } => write!(
                f,
                "({extent}-{kernel}) ok but conv output {conv_out} not divisible by pool size p={pool}"
            ),
            Relation::PoolDivides { extent, pool } => {
                write!(f, "extent {extent} not divisible by pool size p={pool}")
            }
            Relation::StrideRange { kernel, stride } => {
                write!(f, "stride {stride} outside [1, kernel={kernel}]")
            }
            Relation::RankRange {
                rank,
                rows,
                cols,
                max,
            } => write!(
                f,
                "rank {rank} outside [1, min({rows}, {cols}) = {max}]"
            ),
            Relation::ShapeMismatch {
                what,
                expected,
                found,
            } => write!(
                f,
                "{what}: expected {}x{}x{}, found {}x{}x{}",
                expected.0, expected.1, expected.2, found.0, found.1, found.2
            ),
            Relation::Zero { what } => write!(f, "{what} must be positive"),
        }
    }
}

/// Dimension failure with enough context to act on from the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionError {
    /// 1-based layer index; 0 for the input, `l + 1` for the fully connected head.
    pub layer: usize,
    pub axis: Option<Axis>,
    pub relation: Relation,
}

impl fmt::Display for DimensionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.axis {
            Some(axis) => write!(f, "layer {} ({axis}): {}", self.layer, self.relation),
            None => write!(f, "layer {}: {}", self.layer, self.relation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(DimensionError),

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("invalid value for `{field}`: {message}")]
    InvalidValue { field: String, message: String },

    #[error("label vector is not one-hot")]
    NotOneHot,

    #[error("input entries must lie in [0, 1] (found {0})")]
    InputOutOfRange(f64),

    #[error("rho = {rho:.6} <= 0 at n = {n}; the bounds need a larger sample size")]
    NonPositiveRho { rho: f64, n: u64 },

    #[error("non-finite loss at step {step} of trial {trial}")]
    NonFiniteLoss { trial: usize, step: usize },

    #[error("weights file does not match architecture: {0}")]
    WeightsMismatch(String),
}

impl From<DimensionError> for Error {
    fn from(e: DimensionError) -> Self {
        Error::Dimension(e)
    }
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidValue {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
