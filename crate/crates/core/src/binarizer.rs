//! Closed-form sign binarization with per-row scales, and the two-plane
//! residual code used for salient columns.
//!
//! For a fixed row `w` and `B = sign(w)`, `||w - a B||^2` is minimized by
//! `a = mean(|w|)`. `sign(0)` is `+1`.

use crate::bitplane::Bitplane;
use crate::error::QuantError;
use crate::matrix::DenseMatrix;

/// `+alpha` for a set bit, `-alpha` otherwise.
#[inline]
pub fn level(alpha: f32, positive: bool) -> f32 {
    if positive {
        alpha
    } else {
        -alpha
    }
}

/// Per-row scales and a row-major sign plane (`1` = `+1`, `0` = `-1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Binarization {
    rows: usize,
    cols: usize,
    alphas: Vec<f32>,
    signs: Bitplane,
}

impl Binarization {
    pub(crate) fn from_parts(rows: usize, cols: usize, alphas: Vec<f32>, signs: Bitplane) -> Self {
        debug_assert_eq!(alphas.len(), rows);
        debug_assert_eq!(signs.len(), rows * cols);
        Self {
            rows,
            cols,
            alphas,
            signs,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn alphas(&self) -> &[f32] {
        &self.alphas
    }

    pub fn signs(&self) -> &Bitplane {
        &self.signs
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f32 {
        level(self.alphas[row], self.signs.get(row * self.cols + col))
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(i, j, self.value(i, j));
            }
        }
        out
    }
}

/// Binarizes each row of `w` to `alpha_i * sign(w_ij)` with
/// `alpha_i = sum_j |w_ij| / cols`.
pub fn binarize(w: &DenseMatrix) -> Result<Binarization, QuantError> {
    if w.is_empty() {
        return Err(QuantError::EmptyMatrix);
    }
    let (rows, cols) = w.shape();
    let alphas = (0..rows)
        .map(|i| mean_abs(w.row(i)) as f32)
        .collect();
    let signs = Bitplane::from_bools(w.data().iter().map(|&v| v >= 0.0));
    Ok(Binarization::from_parts(rows, cols, alphas, signs))
}

/// Reconstructs `alphas[i] * (+-1)`.
pub fn reconstruct(b: &Binarization) -> DenseMatrix {
    b.reconstruct()
}

pub(crate) fn mean_abs(values: &[f32]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|v| v.abs() as f64).sum::<f64>() / values.len() as f64
}

/// Primary binarization of `w` plus the binarization of what it leaves
/// behind, `w - reconstruct(primary)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBinarization {
    primary: Binarization,
    residual: Binarization,
}

impl ResidualBinarization {
    pub fn primary(&self) -> &Binarization {
        &self.primary
    }

    pub fn residual(&self) -> &Binarization {
        &self.residual
    }

    pub fn rows(&self) -> usize {
        self.primary.rows
    }

    pub fn cols(&self) -> usize {
        self.primary.cols
    }

    /// `alpha_o * b_o + alpha_r * b_r` for one element, rounded once to `f32`.
    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f32 {
        self.primary.value(row, col) + self.residual.value(row, col)
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows(), self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.set(i, j, self.value(i, j));
            }
        }
        out
    }
}

pub fn residual_binarize(w: &DenseMatrix) -> Result<ResidualBinarization, QuantError> {
    let primary = binarize(w)?;
    let rest = w.sub(&primary.reconstruct())?;
    let residual = binarize(&rest)?;
    Ok(ResidualBinarization { primary, residual })
}
