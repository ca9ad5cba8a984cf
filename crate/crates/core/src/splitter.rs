//! Break-point splitting of non-salient weights.
//!
//! A threshold `p` separates the concentrated region `|w| <= p` from the
//! sparse region `|w| > p`. Each row binarizes the two regions with its own
//! mean-absolute scale, so one extra mask bit per weight buys a two-scale
//! code. The threshold is searched over `ratio * max|w|` for a grid of ratios.

use std::fmt::Write as _;

use crate::binarizer::level;
use crate::bitplane::Bitplane;
use crate::error::QuantError;
use crate::matrix::DenseMatrix;

/// `{j / steps : j = 1..steps-1}`.
pub fn uniform_grid(steps: usize) -> Vec<f64> {
    (1..steps).map(|j| j as f64 / steps as f64).collect()
}

/// The default search grid, `{0.01, 0.02, ..., 0.99}`.
pub fn default_grid() -> Vec<f64> {
    uniform_grid(100)
}

/// The coarse tenth-step grid `{0.1, ..., 0.9}`.
pub fn tenths_grid() -> Vec<f64> {
    uniform_grid(10)
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<(), QuantError> {
    if grid.is_empty() {
        return Err(QuantError::EmptyGrid);
    }
    for (i, &r) in grid.iter().enumerate() {
        if !(r > 0.0 && r < 1.0) {
            return Err(QuantError::InvalidGrid(format!("ratio {r} outside (0, 1)")));
        }
        if i > 0 && grid[i - 1] >= r {
            return Err(QuantError::InvalidGrid("ratios must be strictly increasing".into()));
        }
    }
    Ok(())
}

/// Mask (`1` = sparse), signs, and per-row `(alpha_c, alpha_s)` scales.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBinarization {
    rows: usize,
    cols: usize,
    breakpoint: f32,
    mask: Bitplane,
    signs: Bitplane,
    alpha_c: Vec<f32>,
    alpha_s: Vec<f32>,
}

impl SplitBinarization {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn breakpoint(&self) -> f32 {
        self.breakpoint
    }

    pub fn mask(&self) -> &Bitplane {
        &self.mask
    }

    pub fn signs(&self) -> &Bitplane {
        &self.signs
    }

    pub fn alpha_c(&self) -> &[f32] {
        &self.alpha_c
    }

    pub fn alpha_s(&self) -> &[f32] {
        &self.alpha_s
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f32 {
        let k = row * self.cols + col;
        let alpha = if self.mask.get(k) {
            self.alpha_s[row]
        } else {
            self.alpha_c[row]
        };
        level(alpha, self.signs.get(k))
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

/// Split errors over a ratio grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakpointCurve {
    pub ratios: Vec<f64>,
    pub errors: Vec<f64>,
}

impl BreakpointCurve {
    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }

    /// Number of local minima, counting a flat run as one point and the
    /// grid ends as open on their outer side.
    pub fn local_minima(&self) -> usize {
        count_local_minima(&self.errors)
    }

    /// `ratio,error` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ratio,error\n");
        for (r, e) in self.ratios.iter().zip(&self.errors) {
            writeln!(out, "{r},{e}").unwrap();
        }
        out
    }
}

pub(crate) fn count_local_minima(values: &[f64]) -> usize {
    // Collapse equal neighbours into plateaus first.
    let mut plateaus: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        if plateaus.last() != Some(&v) {
            plateaus.push(v);
        }
    }
    (0..plateaus.len())
        .filter(|&i| {
            let left = i == 0 || plateaus[i - 1] > plateaus[i];
            let right = i + 1 == plateaus.len() || plateaus[i + 1] > plateaus[i];
            left && right
        })
        .count()
}

fn check_breakpoint(p: f32) -> Result<(), QuantError> {
    if !(p >= 0.0) || !p.is_finite() {
        return Err(QuantError::InvalidBreakpoint(p));
    }
    Ok(())
}

/// Per-row `(alpha_c, alpha_s)`; an empty region gets scale 0.
fn region_scales(w: &DenseMatrix, p: f32) -> (Vec<f32>, Vec<f32>) {
    let mut alpha_c = Vec::with_capacity(w.rows());
    let mut alpha_s = Vec::with_capacity(w.rows());
    for i in 0..w.rows() {
        let (mut sum_c, mut n_c, mut sum_s, mut n_s) = (0.0f64, 0usize, 0.0f64, 0usize);
        for &v in w.row(i) {
            let a = v.abs();
            if a <= p {
                sum_c += a as f64;
                n_c += 1;
            } else {
                sum_s += a as f64;
                n_s += 1;
            }
        }
        alpha_c.push(if n_c == 0 { 0.0 } else { (sum_c / n_c as f64) as f32 });
        alpha_s.push(if n_s == 0 { 0.0 } else { (sum_s / n_s as f64) as f32 });
    }
    (alpha_c, alpha_s)
}

fn error_with_scales(w: &DenseMatrix, p: f32, alpha_c: &[f32], alpha_s: &[f32]) -> f64 {
    let mut total = 0.0f64;
    for i in 0..w.rows() {
        for &v in w.row(i) {
            let alpha = if v.abs() <= p { alpha_c[i] } else { alpha_s[i] };
            let d = v as f64 - level(alpha, v >= 0.0) as f64;
            total += d * d;
        }
    }
    total
}

/// `||W_s - alpha_s B_s||^2 + ||W_c - alpha_c B_c||^2` for threshold `p`.
///
/// ```
/// use billm::{splitter::split_error, DenseMatrix};
/// let w = DenseMatrix::from_rows(&[[0.1, -0.1, 1.0, -1.0]]).unwrap();
/// assert_eq!(split_error(&w, 0.5).unwrap(), 0.0);
/// ```
pub fn split_error(w: &DenseMatrix, p: f32) -> Result<f64, QuantError> {
    if w.is_empty() {
        return Err(QuantError::EmptyMatrix);
    }
    check_breakpoint(p)?;
    let (alpha_c, alpha_s) = region_scales(w, p);
    Ok(error_with_scales(w, p, &alpha_c, &alpha_s))
}

/// Threshold for one grid ratio. Rounded to `f32` so comparisons against
/// stored weights match the stored breakpoint exactly.
#[inline]
pub fn ratio_to_breakpoint(ratio: f64, max_abs: f32) -> f32 {
    (ratio * max_abs as f64) as f32
}

/// Evaluates every grid ratio and returns the break-point with the lowest
/// split error; ties go to the smallest ratio.
pub fn search_breakpoint(
    w: &DenseMatrix,
    grid: &[f64],
) -> Result<(f32, BreakpointCurve), QuantError> {
    validate_grid(grid)?;
    if w.is_empty() {
        return Err(QuantError::EmptyMatrix);
    }
    let max_abs = w.max_abs();
    let mut best = (f64::INFINITY, 0.0f32);
    let mut errors = Vec::with_capacity(grid.len());
    for &ratio in grid {
        let p = ratio_to_breakpoint(ratio, max_abs);
        let e = split_error(w, p)?;
        if e < best.0 {
            best = (e, p);
        }
        errors.push(e);
    }
    Ok((
        best.1,
        BreakpointCurve {
            ratios: grid.to_vec(),
            errors,
        },
    ))
}

/// Materializes the split code for threshold `p`.
pub fn split_binarize(w: &DenseMatrix, p: f32) -> Result<SplitBinarization, QuantError> {
    if w.is_empty() {
        return Err(QuantError::EmptyMatrix);
    }
    check_breakpoint(p)?;
    let (alpha_c, alpha_s) = region_scales(w, p);
    Ok(SplitBinarization {
        rows: w.rows(),
        cols: w.cols(),
        breakpoint: p,
        mask: Bitplane::from_bools(w.data().iter().map(|v| v.abs() > p)),
        signs: Bitplane::from_bools(w.data().iter().map(|&v| v >= 0.0)),
        alpha_c,
        alpha_s,
    })
}
