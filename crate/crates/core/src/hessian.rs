//! Proxy Hessian `H = 2 X^T X` from calibration rows and the upper
//! Cholesky factor of the damped inverse `(H + lambda I)^-1`.
//!
//! All factorization work runs in `f64`; the stored factor is rounded to
//! `f32` once at the end.

use thiserror::Error;

use crate::matrix::DenseMatrix;

/// Number of times the damping is escalated by 10x after a failed factorization.
pub const MAX_DAMPING_RETRIES: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HessianError {
    #[error("calibration matrix has no rows or no columns")]
    EmptyCalibration,
    #[error("expected a square matrix, got {0}x{1}")]
    ShapeMismatch(usize, usize),
    #[error("matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("damping fraction must be positive and finite, got {0}")]
    InvalidDamping(f64),
    #[error("H + lambda*I is not positive definite (last lambda tried: {last_lambda})")]
    NotPositiveDefinite { last_lambda: f64 },
}

/// Per-layer Hessian, the damping actually applied, and `hc` with
/// `hc^T hc = (H + lambda I)^-1`, `hc` upper triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianState {
    dim: usize,
    h: DenseMatrix,
    lambda: f64,
    hc: DenseMatrix,
}

impl HessianState {
    /// A state whose factor is the identity. Compensation through it is zero
    /// and sensitivities reduce to `w^2`.
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            h: DenseMatrix::identity(dim),
            lambda: 0.0,
            hc: DenseMatrix::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> &DenseMatrix {
        &self.h
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn hc(&self) -> &DenseMatrix {
        &self.hc
    }

    pub fn hc_diag(&self) -> Vec<f32> {
        self.hc.diag()
    }

    /// Diagonal of `(H + lambda I)^-1`, recovered as column norms of `hc`.
    pub fn inverse_diag(&self) -> Vec<f32> {
        (0..self.dim)
            .map(|j| {
                (0..=j)
                    .map(|k| {
                        let v = self.hc.get(k, j) as f64;
                        v * v
                    })
                    .sum::<f64>() as f32
            })
            .collect()
    }
}

/// `2 * sum_s x_s x_s^T` over calibration rows. The upper triangle is
/// accumulated in sample order and mirrored, so the result is exactly
/// symmetric.
pub fn gram_hessian(calib: &DenseMatrix) -> Result<DenseMatrix, HessianError> {
    let (samples, m) = calib.shape();
    if samples == 0 || m == 0 {
        return Err(HessianError::EmptyCalibration);
    }
    let mut acc = vec![0.0f64; m * m];
    for s in 0..samples {
        let x = calib.row(s);
        for j in 0..m {
            let xj = x[j] as f64;
            if xj == 0.0 {
                continue;
            }
            let row = &mut acc[j * m..(j + 1) * m];
            for k in j..m {
                row[k] += xj * x[k] as f64;
            }
        }
    }
    let mut h = DenseMatrix::zeros(m, m);
    for j in 0..m {
        for k in j..m {
            let v = (2.0 * acc[j * m + k]) as f32;
            h.set(j, k, v);
            h.set(k, j, v);
        }
    }
    Ok(h)
}

/// Damps, inverts and factors `h`.
///
/// `lambda = percdamp * mean(diag(h))`; on failure lambda grows by 10x, up
/// to [`MAX_DAMPING_RETRIES`] times.
pub fn factor(h: &DenseMatrix, percdamp: f64) -> Result<HessianState, HessianError> {
    let (n, m) = h.shape();
    if n != m || n == 0 {
        return Err(HessianError::ShapeMismatch(n, m));
    }
    if !(percdamp > 0.0 && percdamp.is_finite()) {
        return Err(HessianError::InvalidDamping(percdamp));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (h.get(i, j) as f64, h.get(j, i) as f64);
            if (a - b).abs() > 1e-6 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
                return Err(HessianError::NotSymmetric(i, j));
            }
        }
    }
    let hd: Vec<f64> = h.data().iter().map(|&v| v as f64).collect();
    let mean_diag = (0..n).map(|i| hd[i * n + i]).sum::<f64>() / n as f64;
    let mut lambda = percdamp * mean_diag;
    for _ in 0..=MAX_DAMPING_RETRIES {
        if let Some(upper) = damped_inverse_factor(&hd, n, lambda) {
            return Ok(HessianState {
                dim: n,
                h: h.clone(),
                lambda,
                hc: DenseMatrix::from_f64(n, n, &upper)
                    .expect("factor entries are finite"),
            });
        }
        lambda *= 10.0;
    }
    Err(HessianError::NotPositiveDefinite {
        last_lambda: lambda / 10.0,
    })
}

/// Upper factor `U` with `U^T U = (H + lambda I)^-1`, or `None` if either
/// Cholesky step meets a non-positive pivot.
fn damped_inverse_factor(h: &[f64], n: usize, lambda: f64) -> Option<Vec<f64>> {
    let mut a = h.to_vec();
    for i in 0..n {
        a[i * n + i] += lambda;
    }
    let l = cholesky_lower(&a, n)?;
    let l_inv = lower_triangular_inverse(&l, n);
    // (H + lambda I)^-1 = L^-T L^-1
    let mut inv = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let start = j.max(i);
            let v: f64 = (start..n).map(|k| l_inv[k * n + i] * l_inv[k * n + j]).sum();
            inv[i * n + j] = v;
            inv[j * n + i] = v;
        }
    }
    let l2 = cholesky_lower(&inv, n)?;
    let mut upper = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            upper[j * n + i] = l2[i * n + j];
        }
    }
    Some(upper)
}

fn cholesky_lower(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0f64; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Some(l)
}

fn lower_triangular_inverse(l: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0f64; n * n];
    for j in 0..n {
        inv[j * n + j] = 1.0 / l[j * n + j];
        for i in (j + 1)..n {
            let s: f64 = (j..i).map(|k| l[i * n + k] * inv[k * n + j]).sum();
            inv[i * n + j] = -s / l[i * n + i];
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_examples() {
        let h = gram_hessian(&DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(h.data(), &[2.0, 4.0, 4.0, 8.0]);
        let h = gram_hessian(&DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(h.data(), &[2.0, 0.0, 0.0, 2.0]);
        let h = gram_hessian(&DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, -1.0]]).unwrap()).unwrap();
        assert_eq!(h.data(), &[4.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn gram_rejects_empty() {
        assert_eq!(
            gram_hessian(&DenseMatrix::zeros(0, 3)),
            Err(HessianError::EmptyCalibration)
        );
    }

    #[test]
    fn factor_diagonal_closed_form() {
        let h = DenseMatrix::identity(2).scale(2.0);
        let st = factor(&h, 0.01).unwrap();
        assert!((st.lambda() - 0.02).abs() < 1e-15);
        let expect = (1.0 / 2.02f64).sqrt() as f32;
        assert_eq!(st.hc().data(), &[expect, 0.0, 0.0, expect]);
    }

    #[test]
    fn factor_rank_one_is_regularized() {
        let h = DenseMatrix::from_rows(&[[2.0, 4.0], [4.0, 8.0]]).unwrap();
        let st = factor(&h, 0.01).unwrap();
        assert!((st.lambda() - 0.05).abs() < 1e-12);
        assert!(st.hc().diag().iter().all(|&d| d > 0.0));
        assert_eq!(st.hc().get(1, 0), 0.0);
    }

    #[test]
    fn factor_identity_small_damping_tends_to_identity() {
        let st = factor(&DenseMatrix::identity(3), 1e-9).unwrap();
        for (a, b) in st.hc().data().iter().zip(DenseMatrix::identity(3).data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn factor_fails_on_zero_hessian() {
        let err = factor(&DenseMatrix::zeros(2, 2), 0.01).unwrap_err();
        assert!(matches!(err, HessianError::NotPositiveDefinite { .. }));
    }

    #[test]
    fn factor_escalates_damping_on_indefinite_input() {
        // mean diag = 0.5, so lambda starts at 0.005 and needs to exceed 1.
        let h = DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, -1.0]]).unwrap();
        let st = factor(&h, 0.01).unwrap();
        assert!((st.lambda() - 5.0).abs() < 1e-9, "lambda {}", st.lambda());
    }

    #[test]
    fn factor_guards() {
        assert!(matches!(
            factor(&DenseMatrix::zeros(2, 3), 0.01),
            Err(HessianError::ShapeMismatch(2, 3))
        ));
        assert!(matches!(
            factor(&DenseMatrix::identity(2), 0.0),
            Err(HessianError::InvalidDamping(_))
        ));
        let asym = DenseMatrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        assert!(matches!(factor(&asym, 0.01), Err(HessianError::NotSymmetric(0, 1))));
    }

    #[test]
    fn inverse_diag_matches_closed_form() {
        let h = DenseMatrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let st = factor(&h, 1e-12).unwrap();
        let d = st.inverse_diag();
        assert!((d[0] - 0.375).abs() < 1e-6);
        assert!((d[1] - 0.5).abs() < 1e-6);
    }
}
