use thiserror::Error;

use crate::hessian::HessianError;
use crate::matrix::MatrixError;

/// Errors raised by the binarization, splitting and layer pipeline stages.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("matrix has no elements")]
    EmptyMatrix,
    #[error("break-point grid is empty")]
    EmptyGrid,
    #[error("invalid break-point grid: {0}")]
    InvalidGrid(String),
    #[error("break-point must be finite and non-negative, got {0}")]
    InvalidBreakpoint(f32),
    #[error("block has {0} columns; at least 2 are required")]
    BlockTooNarrow(usize),
    #[error("sensitivity diagonal entry {index} is {value}; must be positive")]
    NonPositiveDiagonal { index: usize, value: f32 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bit width {0} outside 1..=8")]
    InvalidBits(u32),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Hessian(#[from] HessianError),
}
