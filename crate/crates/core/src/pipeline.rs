//! Layer quantization: walk the columns in blocks, choose salient columns
//! per block from Hessian-weighted sensitivity, code them with two sign
//! planes, split-binarize the rest, and push each block's error onto the
//! columns to its right through the inverse-Hessian factor.

use std::ops::Range;

use crate::binarizer::{binarize, residual_binarize, ResidualBinarization};
use crate::error::QuantError;
use crate::hessian::HessianState;
use crate::matrix::{frobenius_sq, DenseMatrix};
use crate::packfmt::{bit_budget, BitBudget};
use crate::splitter::{default_grid, search_breakpoint, split_binarize, validate_grid, BreakpointCurve, SplitBinarization};

/// Which per-column curvature term divides `w^2` in the sensitivity score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SensitivityKind {
    /// `w^2 / hc_jj^2`, using the diagonal of the upper Cholesky factor.
    #[default]
    CholeskyDiag,
    /// `w^2 / ([H^-1]_jj)^2`.
    InverseDiag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantConfig {
    pub block_size: usize,
    pub percdamp: f64,
    pub salient_min: usize,
    pub salient_max: usize,
    pub grid: Vec<f64>,
    pub baseline_bits: Vec<u32>,
    pub sensitivity: SensitivityKind,
    /// Apply the block-wise error compensation. Off only for A/B runs.
    pub compensate: bool,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            block_size: 128,
            percdamp: 0.01,
            salient_min: 3,
            salient_max: 30,
            grid: default_grid(),
            baseline_bits: vec![1, 2, 3],
            sensitivity: SensitivityKind::default(),
            compensate: true,
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<(), QuantError> {
        if self.block_size == 0 {
            return Err(QuantError::InvalidConfig("block size must be at least 1".into()));
        }
        if self.salient_min == 0 || self.salient_min > self.salient_max {
            return Err(QuantError::InvalidConfig(format!(
                "salient range [{}, {}] must satisfy 1 <= min <= max",
                self.salient_min, self.salient_max
            )));
        }
        if !(self.percdamp > 0.0 && self.percdamp.is_finite()) {
            return Err(QuantError::InvalidConfig(format!(
                "percdamp must be positive, got {}",
                self.percdamp
            )));
        }
        if let Some(&b) = self.baseline_bits.iter().find(|&&b| !(1..=8).contains(&b)) {
            return Err(QuantError::InvalidBits(b));
        }
        validate_grid(&self.grid)
    }

    /// Inclusive salient-count range searched for a block of `width` columns.
    /// The upper end is clamped so at least one column stays non-salient.
    pub fn salient_range(&self, width: usize) -> (usize, usize) {
        let hi = self.salient_max.min(self.block_size.saturating_sub(1)).min(width - 1).max(1);
        (self.salient_min.min(hi), hi)
    }
}

/// Per-element sensitivity scores of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap {
    pub s: DenseMatrix,
}

impl SensitivityMap {
    /// Column sums of `s`, the ranking key for salient columns.
    pub fn column_scores(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.s.cols()];
        for i in 0..self.s.rows() {
            for (acc, &v) in sums.iter_mut().zip(self.s.row(i)) {
                *acc += v as f64;
            }
        }
        sums
    }

    /// Column indices by descending score, ties by lower index.
    pub fn ranked_columns(&self) -> Vec<usize> {
        let scores = self.column_scores();
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order
    }
}

/// `s_ij = w_ij^2 / diag_j^2`.
pub fn sensitivity(w_block: &DenseMatrix, diag: &[f32]) -> Result<SensitivityMap, QuantError> {
    if diag.len() != w_block.cols() {
        return Err(QuantError::DimensionMismatch(format!(
            "{} diagonal entries for {} columns",
            diag.len(),
            w_block.cols()
        )));
    }
    if let Some((index, &value)) = diag.iter().enumerate().find(|(_, &d)| !(d > 0.0)) {
        return Err(QuantError::NonPositiveDiagonal { index, value });
    }
    let cols = w_block.cols();
    let data = w_block
        .data()
        .iter()
        .enumerate()
        .map(|(k, &w)| {
            let r = w as f64 / diag[k % cols] as f64;
            (r * r) as f32
        })
        .collect();
    Ok(SensitivityMap {
        s: DenseMatrix::new(w_block.rows(), cols, data)?,
    })
}

/// Plain-binarization error when `salient` columns and the rest of `w` get
/// separate per-row scales.
fn two_group_error(w: &DenseMatrix, salient: &[usize], rest: &[usize]) -> Result<f64, QuantError> {
    let mut total = 0.0;
    for cols in [salient, rest] {
        if cols.is_empty() {
            continue;
        }
        let part = w.select_columns(cols);
        total += frobenius_sq(&part, &binarize(&part)?.reconstruct())?;
    }
    Ok(total)
}

fn complement(cols: &[usize], width: usize) -> Vec<usize> {
    let mut keep = vec![true; width];
    for &c in cols {
        keep[c] = false;
    }
    (0..width).filter(|&c| keep[c]).collect()
}

/// Outcome of the salient-count search for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct SalientSelection {
    /// Chosen block-local columns, ascending.
    pub cols: Vec<usize>,
    pub n_star: usize,
    /// `(k, error)` for every count tried.
    pub curve: Vec<(usize, f64)>,
}

/// Ranks columns by summed sensitivity and picks the prefix length whose
/// two-group plain binarization error is smallest (ties to the smaller count).
pub fn select_salient_columns(
    w_block: &DenseMatrix,
    smap: &SensitivityMap,
    cfg: &QuantConfig,
) -> Result<SalientSelection, QuantError> {
    let width = w_block.cols();
    if width < 2 {
        return Err(QuantError::BlockTooNarrow(width));
    }
    if smap.s.shape() != w_block.shape() {
        return Err(QuantError::DimensionMismatch("sensitivity map shape".into()));
    }
    let ranked = smap.ranked_columns();
    let (lo, hi) = cfg.salient_range(width);
    let mut best = (f64::INFINITY, lo);
    let mut curve = Vec::with_capacity(hi + 1 - lo);
    for k in lo..=hi {
        let mut salient = ranked[..k].to_vec();
        salient.sort_unstable();
        let rest = complement(&salient, width);
        let e = two_group_error(w_block, &salient, &rest)?;
        if e < best.0 {
            best = (e, k);
        }
        curve.push((k, e));
    }
    let mut cols = ranked[..best.1].to_vec();
    cols.sort_unstable();
    Ok(SalientSelection {
        cols,
        n_star: best.1,
        curve,
    })
}

/// One quantized block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockQuantResult {
    /// First global column of the block.
    pub start: usize,
    /// Block-local salient columns, ascending.
    pub salient_cols: Vec<usize>,
    pub salient: Option<ResidualBinarization>,
    pub nonsalient: SplitBinarization,
    pub reconstruction: DenseMatrix,
    /// Error against the block as it was quantized (after compensation from
    /// earlier blocks).
    pub block_error: f64,
    pub salient_curve: Vec<(usize, f64)>,
    pub breakpoint_curve: BreakpointCurve,
}

impl BlockQuantResult {
    pub fn width(&self) -> usize {
        self.reconstruction.cols()
    }

    pub fn n_star(&self) -> usize {
        self.salient_cols.len()
    }

    pub fn breakpoint(&self) -> f32 {
        self.nonsalient.breakpoint()
    }

    /// Block-local non-salient columns, ascending.
    pub fn nonsalient_cols(&self) -> Vec<usize> {
        complement(&self.salient_cols, self.width())
    }
}

/// Quantizes one block given the per-column curvature terms for its
/// sensitivity scores.
pub fn quantize_block(
    w_block: &DenseMatrix,
    diag: &[f32],
    cfg: &QuantConfig,
) -> Result<BlockQuantResult, QuantError> {
    quantize_block_at(w_block, diag, cfg, 0)
}

fn quantize_block_at(
    w_block: &DenseMatrix,
    diag: &[f32],
    cfg: &QuantConfig,
    start: usize,
) -> Result<BlockQuantResult, QuantError> {
    let width = w_block.cols();
    if width < 2 {
        return Err(QuantError::BlockTooNarrow(width));
    }
    if w_block.rows() == 0 {
        return Err(QuantError::EmptyMatrix);
    }
    let smap = sensitivity(w_block, diag)?;
    let sel = select_salient_columns(w_block, &smap, cfg)?;
    let rest = complement(&sel.cols, width);

    let salient = if sel.cols.is_empty() {
        None
    } else {
        Some(residual_binarize(&w_block.select_columns(&sel.cols))?)
    };
    let w_rest = w_block.select_columns(&rest);
    let (p_star, breakpoint_curve) = search_breakpoint(&w_rest, &cfg.grid)?;
    let nonsalient = split_binarize(&w_rest, p_star)?;

    let mut reconstruction = DenseMatrix::zeros(w_block.rows(), width);
    for i in 0..w_block.rows() {
        if let Some(s) = &salient {
            for (j, &c) in sel.cols.iter().enumerate() {
                reconstruction.set(i, c, s.value(i, j));
            }
        }
        for (j, &c) in rest.iter().enumerate() {
            reconstruction.set(i, c, nonsalient.value(i, j));
        }
    }
    let block_error = frobenius_sq(w_block, &reconstruction)?;
    Ok(BlockQuantResult {
        start,
        salient_cols: sel.cols,
        salient,
        nonsalient,
        reconstruction,
        block_error,
        salient_curve: sel.curve,
        breakpoint_curve,
    })
}

/// Propagates one block's quantization error onto later columns:
/// `E = (W_block - recon) / diag(hc_block)`, `W_rest -= E * hc[block, rest]`.
///
/// `block` and `rest` are global column ranges into `hc`; `rest` must start
/// at or after `block.end`.
pub fn compensate(
    w_rest: &DenseMatrix,
    w_block: &DenseMatrix,
    recon: &DenseMatrix,
    hc: &DenseMatrix,
    block: Range<usize>,
    rest: Range<usize>,
) -> Result<DenseMatrix, QuantError> {
    let n = w_block.rows();
    if w_block.shape() != recon.shape()
        || w_block.cols() != block.len()
        || w_rest.rows() != n
        || w_rest.cols() != rest.len()
        || hc.rows() != hc.cols()
        || block.end > hc.cols()
        || rest.end > hc.cols()
        || rest.start < block.end
    {
        return Err(QuantError::DimensionMismatch(format!(
            "compensate: block {:?} {:?}, rest {:?} {:?}, hc {:?}",
            block,
            w_block.shape(),
            rest,
            w_rest.shape(),
            hc.shape()
        )));
    }
    let width = block.len();
    let mut out = w_rest.clone();
    if rest.is_empty() {
        return Ok(out);
    }
    let diag: Vec<f64> = block.clone().map(|g| hc.get(g, g) as f64).collect();
    if let Some(index) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(QuantError::NonPositiveDiagonal {
            index: block.start + index,
            value: diag[index] as f32,
        });
    }
    let mut acc = vec![0.0f64; rest.len()];
    for i in 0..n {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for j in 0..width {
            let e = (w_block.get(i, j) as f64 - recon.get(i, j) as f64) / diag[j];
            if e == 0.0 {
                continue;
            }
            let hrow = &hc.row(block.start + j)[rest.clone()];
            for (a, &h) in acc.iter_mut().zip(hrow) {
                *a += e * h as f64;
            }
        }
        for (r, &a) in acc.iter().enumerate() {
            out.set(i, r, (w_rest.get(i, r) as f64 - a) as f32);
        }
    }
    Ok(out)
}

/// Column ranges for a layer of `cols` columns: width-`block_size` blocks
/// left to right, with a trailing one-column block merged into its
/// predecessor.
pub fn block_ranges(cols: usize, block_size: usize) -> Vec<Range<usize>> {
    assert!(block_size > 0, "block size must be positive");
    let mut ranges: Vec<Range<usize>> = (0..cols)
        .step_by(block_size)
        .map(|s| s..(s + block_size).min(cols))
        .collect();
    if ranges.len() >= 2 && ranges.last().is_some_and(|r| r.len() == 1) {
        let last = ranges.pop().unwrap();
        ranges.last_mut().unwrap().end = last.end;
    }
    ranges
}

/// A fully quantized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerQuantResult {
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    pub blocks: Vec<BlockQuantResult>,
    pub reconstruction: DenseMatrix,
    /// Squared error of the reconstruction against the original weights.
    pub total_error: f64,
    pub budget: BitBudget,
}

impl LayerQuantResult {
    pub fn param_bits(&self) -> f64 {
        self.budget.param_bits
    }

    pub fn storage_bits(&self) -> f64 {
        self.budget.storage_bits
    }

    pub fn r_salient(&self) -> f64 {
        self.budget.r_salient
    }

    pub fn mse(&self) -> f64 {
        self.total_error / (self.rows * self.cols) as f64
    }
}

/// Quantizes a whole layer block by block.
pub fn quantize_layer(
    w: &DenseMatrix,
    hessian: &HessianState,
    cfg: &QuantConfig,
) -> Result<LayerQuantResult, QuantError> {
    cfg.validate()?;
    let (rows, cols) = w.shape();
    if hessian.dim() != cols {
        return Err(QuantError::DimensionMismatch(format!(
            "hessian dim {} vs {} weight columns",
            hessian.dim(),
            cols
        )));
    }
    if rows == 0 {
        return Err(QuantError::EmptyMatrix);
    }
    if cols < 2 {
        return Err(QuantError::BlockTooNarrow(cols));
    }
    let diag = match cfg.sensitivity {
        SensitivityKind::CholeskyDiag => hessian.hc_diag(),
        SensitivityKind::InverseDiag => hessian.inverse_diag(),
    };
    let mut working = w.clone();
    let mut reconstruction = DenseMatrix::zeros(rows, cols);
    let mut blocks = Vec::new();
    for range in block_ranges(cols, cfg.block_size) {
        let w_block = working.column_range(range.start, range.end);
        let res = quantize_block_at(&w_block, &diag[range.clone()], cfg, range.start)?;
        reconstruction.write_columns(range.start, &res.reconstruction);
        if cfg.compensate && range.end < cols {
            let rest = range.end..cols;
            let w_rest = working.column_range(rest.start, rest.end);
            let updated = compensate(&w_rest, &w_block, &res.reconstruction, hessian.hc(), range.clone(), rest.clone())?;
            working.write_columns(rest.start, &updated);
        }
        blocks.push(res);
    }
    let total_error = frobenius_sq(w, &reconstruction)?;
    let salient_elems: usize = blocks.iter().map(|b| b.n_star() * rows).sum();
    let r_salient = salient_elems as f64 / (rows * cols) as f64;
    Ok(LayerQuantResult {
        rows,
        cols,
        block_size: cfg.block_size,
        blocks,
        reconstruction,
        total_error,
        budget: bit_budget(r_salient, cfg.block_size),
    })
}

/// Per-row asymmetric min-max round-to-nearest quantization (ties to even),
/// returned dequantized.
pub fn rtn_quantize(w: &DenseMatrix, bits: u32) -> Result<DenseMatrix, QuantError> {
    if !(1..=8).contains(&bits) {
        return Err(QuantError::InvalidBits(bits));
    }
    let levels = ((1u32 << bits) - 1) as f64;
    let mut out = DenseMatrix::zeros(w.rows(), w.cols());
    for i in 0..w.rows() {
        let row = w.row(i);
        let lo = row.iter().copied().fold(f32::INFINITY, f32::min) as f64;
        let hi = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let scale = (hi - lo) / levels;
        for (j, &v) in row.iter().enumerate() {
            let q = if scale > 0.0 {
                ((v as f64 - lo) / scale).round_ties_even().clamp(0.0, levels)
            } else {
                0.0
            };
            let deq = if scale > 0.0 { lo + q * scale } else { v as f64 };
            out.set(i, j, deq as f32);
        }
    }
    Ok(out)
}
