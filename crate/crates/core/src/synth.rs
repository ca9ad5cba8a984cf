//! Seeded synthetic weights and calibration inputs.
//!
//! Weight bodies are zero-mean with standard deviation [`BODY_STD`]; planted
//! salient columns are the same draw scaled by [`SALIENT_SCALE`].

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, LogNormal, StandardNormal, StudentT};

use crate::matrix::DenseMatrix;

pub const BODY_STD: f64 = 0.02;
pub const SALIENT_SCALE: f64 = 10.0;
/// Degrees of freedom for the heavy-tailed body.
pub const STUDENT_DOF: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BodyDist {
    Gauss,
    Laplace,
    Student,
}

impl BodyDist {
    /// One draw with unit variance.
    pub fn sample_unit<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            BodyDist::Gauss => rng.sample(StandardNormal),
            BodyDist::Laplace => {
                // Var(Laplace(b)) = 2 b^2.
                let e: f64 = rng.sample(Exp1);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * e / std::f64::consts::SQRT_2
            }
            BodyDist::Student => {
                let t: f64 = StudentT::new(STUDENT_DOF).unwrap().sample(rng);
                t * ((STUDENT_DOF - 2.0) / STUDENT_DOF).sqrt()
            }
        }
    }
}

impl fmt::Display for BodyDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BodyDist::Gauss => "gauss",
            BodyDist::Laplace => "laplace",
            BodyDist::Student => "student",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownDistribution(pub String);

impl fmt::Display for UnknownDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown distribution {:?} (expected gauss, laplace or student)", self.0)
    }
}

impl std::error::Error for UnknownDistribution {}

impl FromStr for BodyDist {
    type Err = UnknownDistribution;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gauss" | "gaussian" | "normal" => Ok(BodyDist::Gauss),
            "laplace" => Ok(BodyDist::Laplace),
            "student" | "student-t" | "t" => Ok(BodyDist::Student),
            other => Err(UnknownDistribution(other.to_owned())),
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `rows x cols` i.i.d. draws from `dist`, scaled to standard deviation `std`.
pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, dist: BodyDist, std: f64) -> DenseMatrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| dist.sample_unit(rng) * std).collect();
    DenseMatrix::from_f64(rows, cols, &data).expect("finite samples")
}

/// Weight body plus `salient_cols` distinct columns scaled up by
/// [`SALIENT_SCALE`]. Returns the weights and the planted column indices,
/// ascending.
pub fn planted_weights<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    dist: BodyDist,
    salient_cols: usize,
) -> (DenseMatrix, Vec<usize>) {
    let body = random_matrix(rng, rows, cols, dist, BODY_STD);
    let mut planted = sample(rng, cols, salient_cols.min(cols)).into_vec();
    planted.sort_unstable();
    let mut data = body.into_data();
    for &c in &planted {
        for i in 0..rows {
            data[i * cols + c] *= SALIENT_SCALE as f32;
        }
    }
    (DenseMatrix::new(rows, cols, data).expect("finite"), planted)
}

/// Gaussian calibration rows with AR(1) correlation `rho` between
/// neighbouring features (`rho = 0` gives i.i.d. rows).
pub fn calibration<R: Rng + ?Sized>(rng: &mut R, samples: usize, cols: usize, rho: f64) -> DenseMatrix {
    assert!((0.0..1.0).contains(&rho.abs()), "|rho| must be below 1");
    let innov = (1.0 - rho * rho).sqrt();
    let mut data = Vec::with_capacity(samples * cols);
    for _ in 0..samples {
        let mut prev = 0.0f64;
        for j in 0..cols {
            let z: f64 = rng.sample(StandardNormal);
            let v = if j == 0 { z } else { rho * prev + innov * z };
            data.push(v);
            prev = v;
        }
    }
    DenseMatrix::from_f64(samples, cols, &data).expect("finite samples")
}

/// Parameters for one synthetic layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub dist: BodyDist,
    pub salient_cols: usize,
    pub calib_rows: usize,
    pub calib_corr: f64,
}

/// A weight matrix and matching calibration rows from one seed.
pub fn synth_layer(spec: &SynthSpec, seed: u64) -> (DenseMatrix, DenseMatrix) {
    let mut r = rng(seed);
    let (w, _) = planted_weights(&mut r, spec.rows, spec.cols, spec.dist, spec.salient_cols);
    let x = calibration(&mut r, spec.calib_rows, spec.cols, spec.calib_corr);
    (w, x)
}

/// Log-standard-deviation of the per-column scale in [`llm_block`] layers.
pub const COLUMN_SCALE_SIGMA: f64 = 0.5;

/// Heavy-tailed weights whose columns carry log-normally spread scales, so
/// column magnitudes are uneven the way trained projection weights are.
pub fn heterogeneous_weights<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, sigma: f64) -> DenseMatrix {
    let ln = LogNormal::new(0.0, sigma).expect("valid sigma");
    let scales: Vec<f32> = (0..cols).map(|_| ln.sample(rng) as f32).collect();
    let body = random_matrix(rng, rows, cols, BodyDist::Student, BODY_STD);
    let data = body
        .data()
        .iter()
        .enumerate()
        .map(|(k, &v)| v * scales[k % cols])
        .collect();
    DenseMatrix::new(rows, cols, data).expect("finite")
}

/// One decoder block's linear layers with a scaled-down hidden size:
/// four `hidden x hidden` attention projections, gate and up projections of
/// `ffn x hidden`, and a `hidden x ffn` down projection, where
/// `ffn = round(hidden * 11008 / 4096)`. Each layer comes with `calib_rows`
/// i.i.d. Gaussian calibration rows.
pub fn llm_block(hidden: usize, calib_rows: usize, seed: u64) -> Vec<(String, DenseMatrix, DenseMatrix)> {
    let ffn = (hidden as f64 * 11008.0 / 4096.0).round() as usize;
    let shapes = [
        ("q_proj", hidden, hidden),
        ("k_proj", hidden, hidden),
        ("v_proj", hidden, hidden),
        ("o_proj", hidden, hidden),
        ("gate_proj", ffn, hidden),
        ("up_proj", ffn, hidden),
        ("down_proj", hidden, ffn),
    ];
    let mut r = rng(seed);
    shapes
        .iter()
        .map(|&(name, rows, cols)| {
            let w = heterogeneous_weights(&mut r, rows, cols, COLUMN_SCALE_SIGMA);
            let x = calibration(&mut r, calib_rows, cols, 0.0);
            (name.to_owned(), w, x)
        })
        .collect()
}

/// Sample excess kurtosis.
pub fn excess_kurtosis(values: &[f32]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(a, b), &v| {
        let d = v as f64 - mean;
        (a + d * d, b + d * d * d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    m4 / (m2 * m2) - 3.0
}
