//! Row-major dense `f32` matrices and the reductions shared by every stage.
//!
//! Storage is `f32`; every reduction accumulates in `f64` and walks the
//! elements in row-major index order, so repeated runs are bit-identical.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("data length {len} does not match {rows}x{cols}")]
    LengthMismatch { rows: usize, cols: usize, len: usize },
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("ragged rows: row {row} has {len} values, expected {expected}")]
    Ragged {
        row: usize,
        len: usize,
        expected: usize,
    },
}

/// A row-major `rows x cols` matrix of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    /// Builds a matrix, rejecting length mismatches and NaN/Inf entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, MatrixError> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(MatrixError::LengthMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(MatrixError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row slices.
    ///
    /// ```
    /// use billm::DenseMatrix;
    /// let m = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
    /// assert_eq!(m.get(1, 0), 3.0);
    /// ```
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self, MatrixError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(MatrixError::Ragged {
                    row: i,
                    len: r.len(),
                    expected: cols,
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Builds a matrix from `f64` values rounded to `f32`.
    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Result<Self, MatrixError> {
        Self::new(rows, cols, data.iter().map(|&v| v as f32).collect())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    /// Writes one entry. Callers must keep the value finite.
    #[inline]
    pub(crate) fn set(&mut self, row: usize, col: usize, value: f32) {
        debug_assert!(value.is_finite());
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn diag(&self) -> Vec<f32> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Copies the listed columns, in the order given.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Self {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }

    /// Copies the half-open column range `start..end`.
    pub fn column_range(&self, start: usize, end: usize) -> Self {
        let cols: Vec<usize> = (start..end).collect();
        self.select_columns(&cols)
    }

    /// Overwrites columns `start..start + src.cols()` with `src`.
    pub fn write_columns(&mut self, start: usize, src: &DenseMatrix) {
        assert_eq!(self.rows, src.rows, "row count mismatch");
        assert!(start + src.cols <= self.cols, "column range out of bounds");
        for i in 0..self.rows {
            let dst = &mut self.data[i * self.cols + start..i * self.cols + start + src.cols];
            dst.copy_from_slice(src.row(i));
        }
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &DenseMatrix) -> Result<Self, MatrixError> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, factor: f32) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// `self * other` with `f64` accumulation.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<Self, MatrixError> {
        if self.cols != other.rows {
            return Err(MatrixError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        let mut acc = vec![0.0f64; other.cols];
        for i in 0..self.rows {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (k, &a) in self.row(i).iter().enumerate() {
                let a = a as f64;
                for (slot, &b) in acc.iter_mut().zip(other.row(k)) {
                    *slot += a * b as f64;
                }
            }
            for (j, &v) in acc.iter().enumerate() {
                out.data[i * other.cols + j] = v as f32;
            }
        }
        Ok(out)
    }

    /// `self * x` with `f64` accumulation.
    pub fn matvec(&self, x: &[f32]) -> Result<Vec<f32>, MatrixError> {
        if x.len() != self.cols {
            return Err(MatrixError::ShapeMismatch {
                left: self.shape(),
                right: (x.len(), 1),
            });
        }
        Ok((0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x)
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum::<f64>() as f32
            })
            .collect())
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_same_shape(&self, other: &DenseMatrix) -> Result<(), MatrixError> {
        if self.shape() != other.shape() {
            return Err(MatrixError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

/// Squared Frobenius distance `sum((a - b)^2)`, accumulated in `f64` in
/// row-major order.
///
/// ```
/// use billm::{frobenius_sq, DenseMatrix};
/// let a = DenseMatrix::from_rows(&[[3.0, 1.0, -1.0, -3.0]]).unwrap();
/// let b = DenseMatrix::from_rows(&[[2.0, 2.0, -2.0, -2.0]]).unwrap();
/// assert_eq!(frobenius_sq(&a, &b).unwrap(), 4.0);
/// ```
pub fn frobenius_sq(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64, MatrixError> {
    a.check_same_shape(b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum())
}

/// Proxy output loss `||X (W - W_hat)^T||_F^2` for calibration rows `X`.
pub fn proxy_loss(
    calib: &DenseMatrix,
    w: &DenseMatrix,
    w_hat: &DenseMatrix,
) -> Result<f64, MatrixError> {
    w.check_same_shape(w_hat)?;
    if calib.cols() != w.cols() {
        return Err(MatrixError::ShapeMismatch {
            left: calib.shape(),
            right: w.shape(),
        });
    }
    let diff: Vec<f64> = w
        .data
        .iter()
        .zip(&w_hat.data)
        .map(|(&a, &b)| a as f64 - b as f64)
        .collect();
    let m = w.cols();
    let mut total = 0.0f64;
    for s in 0..calib.rows() {
        let x = calib.row(s);
        for i in 0..w.rows() {
            let d = &diff[i * m..(i + 1) * m];
            let y: f64 = x.iter().zip(d).map(|(&xv, &dv)| xv as f64 * dv).sum();
            total += y * y;
        }
    }
    Ok(total)
}
