//! The `BLPQ` packed layer format, its dequantizer, a bit-serial
//! matrix-vector product, and bit-budget accounting.
//!
//! ```text
//! "BLPQ"  u32 version=1
//! u64 rows  u64 cols  u32 block_size  u32 block_count
//! per block:
//!   u32 width  u32 k  k x u32 salient column (global, ascending)
//!   if k > 0:
//!     B_o plane  ceil(k*rows/8) bytes, column-major over salient columns
//!     B_r plane  same layout
//!     alpha_o    rows x f32
//!     alpha_r    rows x f32
//!   mask plane   ceil(rows*(width-k)/8) bytes, row-major over non-salient columns
//!   sign plane   same layout
//!   alpha_c      rows x f32
//!   alpha_s      rows x f32
//!   p            f32
//! ```
//!
//! Integers and floats are little-endian; bit planes are LSB-first with zero
//! padding. Block widths must follow [`block_ranges`], so each layer has
//! exactly one encoding.

use thiserror::Error;

use crate::binarizer::level;
use crate::bitplane::Bitplane;
use crate::matrix::DenseMatrix;
use crate::pipeline::{block_ranges, LayerQuantResult};

pub const PACKED_MAGIC: [u8; 4] = *b"BLPQ";
pub const PACKED_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PackError {
    #[error("bad magic {0:02x?}, expected \"BLPQ\"")]
    BadMagic([u8; 4]),
    #[error("unsupported packed version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated stream while reading {0}")]
    Truncated(&'static str),
    #[error("block {block} declares {k} salient columns with block size {block_size}")]
    OversizeBlock {
        block: usize,
        k: usize,
        block_size: usize,
    },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

fn invalid(msg: impl Into<String>) -> PackError {
    PackError::InvariantViolation(msg.into())
}

/// Bits per weight for a salient fraction and block size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitBudget {
    pub r_salient: f64,
    pub block_size: usize,
    /// Weight bits that take part in compute: `2 r + (1 - r)`.
    pub param_bits: f64,
    /// Flag overhead: one group bit per weight plus `1 / block_size` for the
    /// salient column markers.
    pub storage_bits: f64,
    /// `param_bits + storage_bits`, every stored plane bit (scales excluded).
    pub total_bits: f64,
}

/// ```
/// let b = billm::packfmt::bit_budget(0.1, 128);
/// assert_eq!(b.param_bits, 1.1);
/// assert_eq!(b.storage_bits, 1.0 + 1.0 / 128.0);
/// ```
pub fn bit_budget(r_salient: f64, block_size: usize) -> BitBudget {
    assert!((0.0..=1.0).contains(&r_salient), "salient fraction {r_salient} outside [0, 1]");
    assert!(block_size >= 1, "block size must be positive");
    let param_bits = 2.0 * r_salient + (1.0 - r_salient);
    let storage_bits = 1.0 + 1.0 / block_size as f64;
    BitBudget {
        r_salient,
        block_size,
        param_bits,
        storage_bits,
        total_bits: param_bits + storage_bits,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedBlock {
    pub width: usize,
    /// Global column indices, ascending.
    pub salient_cols: Vec<u32>,
    /// Column-major: bit `j * rows + i` is row `i` of salient column `j`.
    pub primary_signs: Bitplane,
    pub residual_signs: Bitplane,
    pub alpha_o: Vec<f32>,
    pub alpha_r: Vec<f32>,
    /// Row-major over the non-salient columns; `1` marks the sparse region.
    pub mask: Bitplane,
    pub signs: Bitplane,
    pub alpha_c: Vec<f32>,
    pub alpha_s: Vec<f32>,
    pub breakpoint: f32,
}

impl PackedBlock {
    pub fn k(&self) -> usize {
        self.salient_cols.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedLayer {
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    pub blocks: Vec<PackedBlock>,
}

impl PackedLayer {
    pub fn from_result(layer: &LayerQuantResult) -> Result<Self, PackError> {
        let n = layer.rows;
        let mut blocks = Vec::with_capacity(layer.blocks.len());
        for (bi, b) in layer.blocks.iter().enumerate() {
            let k = b.salient_cols.len();
            if k >= layer.block_size {
                return Err(PackError::OversizeBlock {
                    block: bi,
                    k,
                    block_size: layer.block_size,
                });
            }
            let (mut primary_signs, mut residual_signs) = (Bitplane::zeros(k * n), Bitplane::zeros(k * n));
            let (mut alpha_o, mut alpha_r) = (Vec::new(), Vec::new());
            if let Some(s) = &b.salient {
                for j in 0..k {
                    for i in 0..n {
                        primary_signs.set(j * n + i, s.primary().signs().get(i * k + j));
                        residual_signs.set(j * n + i, s.residual().signs().get(i * k + j));
                    }
                }
                alpha_o = s.primary().alphas().to_vec();
                alpha_r = s.residual().alphas().to_vec();
            }
            let ns = &b.nonsalient;
            blocks.push(PackedBlock {
                width: b.width(),
                salient_cols: b.salient_cols.iter().map(|&c| (b.start + c) as u32).collect(),
                primary_signs,
                residual_signs,
                alpha_o,
                alpha_r,
                mask: ns.mask().clone(),
                signs: ns.signs().clone(),
                alpha_c: ns.alpha_c().to_vec(),
                alpha_s: ns.alpha_s().to_vec(),
                breakpoint: ns.breakpoint(),
            });
        }
        let packed = Self {
            rows: n,
            cols: layer.cols,
            block_size: layer.block_size,
            blocks,
        };
        packed.validate()?;
        Ok(packed)
    }

    /// Fraction of weights coded with two planes.
    pub fn r_salient(&self) -> f64 {
        let k: usize = self.blocks.iter().map(PackedBlock::k).sum();
        (k * self.rows) as f64 / (self.rows * self.cols) as f64
    }

    pub fn budget(&self) -> BitBudget {
        bit_budget(self.r_salient(), self.block_size)
    }

    /// First global column of every block.
    pub fn block_starts(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .scan(0usize, |s, b| {
                let start = *s;
                *s += b.width;
                Some(start)
            })
            .collect()
    }

    /// Checks every structural invariant of the format.
    pub fn validate(&self) -> Result<(), PackError> {
        let n = self.rows;
        if n == 0 || self.cols < 2 || self.block_size == 0 {
            return Err(invalid(format!(
                "degenerate header: {}x{} with block size {}",
                n, self.cols, self.block_size
            )));
        }
        let expected: Vec<usize> = block_ranges(self.cols, self.block_size).iter().map(|r| r.len()).collect();
        let widths: Vec<usize> = self.blocks.iter().map(|b| b.width).collect();
        if widths != expected {
            return Err(invalid(format!("block widths {widths:?}, expected {expected:?}")));
        }
        for ((bi, b), start) in self.blocks.iter().enumerate().zip(self.block_starts()) {
            let k = b.k();
            if k >= self.block_size {
                return Err(PackError::OversizeBlock {
                    block: bi,
                    k,
                    block_size: self.block_size,
                });
            }
            if k >= b.width {
                return Err(invalid(format!("block {bi}: {k} salient columns in width {}", b.width)));
            }
            let in_range = b
                .salient_cols
                .iter()
                .all(|&c| (c as usize) >= start && (c as usize) < start + b.width);
            let ascending = b.salient_cols.windows(2).all(|w| w[0] < w[1]);
            if !in_range || !ascending {
                return Err(invalid(format!("block {bi}: salient columns not ascending within block")));
            }
            let u = b.width - k;
            if b.primary_signs.len() != k * n || b.residual_signs.len() != k * n {
                return Err(invalid(format!("block {bi}: salient plane length")));
            }
            if b.mask.len() != u * n || b.signs.len() != u * n {
                return Err(invalid(format!("block {bi}: non-salient plane length")));
            }
            let salient_scales = if k == 0 { 0 } else { n };
            if b.alpha_o.len() != salient_scales || b.alpha_r.len() != salient_scales {
                return Err(invalid(format!("block {bi}: salient scale count")));
            }
            if b.alpha_c.len() != n || b.alpha_s.len() != n {
                return Err(invalid(format!("block {bi}: region scale count")));
            }
            let scales_ok = [&b.alpha_o, &b.alpha_r, &b.alpha_c, &b.alpha_s]
                .iter()
                .all(|v| v.iter().all(|a| a.is_finite() && *a >= 0.0));
            if !scales_ok || !(b.breakpoint.is_finite() && b.breakpoint >= 0.0) {
                return Err(invalid(format!("block {bi}: scales must be finite and non-negative")));
            }
            for i in 0..n {
                let sparse = (0..u).filter(|&j| b.mask.get(i * u + j)).count();
                if (sparse == 0 && b.alpha_s[i] != 0.0) || (sparse == u && b.alpha_c[i] != 0.0) {
                    return Err(invalid(format!("block {bi} row {i}: empty region with nonzero scale")));
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&PACKED_MAGIC);
        out.extend_from_slice(&PACKED_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        out.extend_from_slice(&(self.block_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        let put_f32s = |out: &mut Vec<u8>, v: &[f32]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for b in &self.blocks {
            out.extend_from_slice(&(b.width as u32).to_le_bytes());
            out.extend_from_slice(&(b.k() as u32).to_le_bytes());
            for c in &b.salient_cols {
                out.extend_from_slice(&c.to_le_bytes());
            }
            if b.k() > 0 {
                out.extend_from_slice(b.primary_signs.as_bytes());
                out.extend_from_slice(b.residual_signs.as_bytes());
                put_f32s(&mut out, &b.alpha_o);
                put_f32s(&mut out, &b.alpha_r);
            }
            out.extend_from_slice(b.mask.as_bytes());
            out.extend_from_slice(b.signs.as_bytes());
            put_f32s(&mut out, &b.alpha_c);
            put_f32s(&mut out, &b.alpha_s);
            out.extend_from_slice(&b.breakpoint.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PackError> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != PACKED_MAGIC {
            return Err(PackError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != PACKED_VERSION {
            return Err(PackError::UnsupportedVersion(version));
        }
        let rows = r.u64("rows")?;
        let cols = r.u64("cols")?;
        let block_size = r.u32("block size")? as usize;
        let block_count = r.u32("block count")? as usize;
        let (rows, cols) = match (usize::try_from(rows), usize::try_from(cols)) {
            (Ok(n), Ok(m)) if n.checked_mul(m).is_some() => (n, m),
            _ => return Err(invalid("dimensions overflow")),
        };
        if block_size == 0 {
            return Err(invalid("block size 0"));
        }
        let mut blocks = Vec::new();
        for bi in 0..block_count {
            let width = r.u32("block width")? as usize;
            let k = r.u32("salient count")? as usize;
            if k >= block_size {
                return Err(PackError::OversizeBlock { block: bi, k, block_size });
            }
            if k >= width || width > cols {
                return Err(invalid(format!("block {bi}: {k} salient columns in width {width}")));
            }
            let salient_cols = (0..k).map(|_| r.u32("salient columns")).collect::<Result<Vec<_>, _>>()?;
            let (primary_signs, residual_signs, alpha_o, alpha_r) = if k > 0 {
                (
                    r.plane(k * rows, "salient plane")?,
                    r.plane(k * rows, "residual plane")?,
                    r.f32s(rows, "salient scales")?,
                    r.f32s(rows, "residual scales")?,
                )
            } else {
                (Bitplane::zeros(0), Bitplane::zeros(0), Vec::new(), Vec::new())
            };
            let u = width - k;
            let mask = r.plane(u * rows, "mask plane")?;
            let signs = r.plane(u * rows, "sign plane")?;
            let alpha_c = r.f32s(rows, "concentrated scales")?;
            let alpha_s = r.f32s(rows, "sparse scales")?;
            let breakpoint = r.f32s(1, "break-point")?[0];
            blocks.push(PackedBlock {
                width,
                salient_cols,
                primary_signs,
                residual_signs,
                alpha_o,
                alpha_r,
                mask,
                signs,
                alpha_c,
                alpha_s,
                breakpoint,
            });
        }
        if r.pos != bytes.len() {
            return Err(invalid(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let layer = Self {
            rows,
            cols,
            block_size,
            blocks,
        };
        layer.validate()?;
        Ok(layer)
    }
}

/// Encodes a quantized layer as a `BLPQ` stream.
pub fn pack(layer: &LayerQuantResult) -> Result<Vec<u8>, PackError> {
    Ok(PackedLayer::from_result(layer)?.to_bytes())
}

/// Decodes and fully validates a `BLPQ` stream.
pub fn unpack(bytes: &[u8]) -> Result<PackedLayer, PackError> {
    PackedLayer::from_bytes(bytes)
}

/// Reconstructs the dense weights. Matches the pipeline reconstruction bit
/// for bit.
pub fn dequantize(p: &PackedLayer) -> DenseMatrix {
    let n = p.rows;
    let mut out = DenseMatrix::zeros(n, p.cols);
    for (b, start) in p.blocks.iter().zip(p.block_starts()) {
        for (j, &c) in b.salient_cols.iter().enumerate() {
            for i in 0..n {
                let v = level(b.alpha_o[i], b.primary_signs.get(j * n + i))
                    + level(b.alpha_r[i], b.residual_signs.get(j * n + i));
                out.set(i, c as usize, v);
            }
        }
        let rest = nonsalient_columns(b, start);
        let u = rest.len();
        for i in 0..n {
            for (j, &c) in rest.iter().enumerate() {
                let bit = i * u + j;
                let alpha = if b.mask.get(bit) { b.alpha_s[i] } else { b.alpha_c[i] };
                out.set(i, c, level(alpha, b.signs.get(bit)));
            }
        }
    }
    out
}

fn nonsalient_columns(b: &PackedBlock, start: usize) -> Vec<usize> {
    let mut sal = b.salient_cols.iter().map(|&c| c as usize).peekable();
    (start..start + b.width)
        .filter(|&c| {
            if sal.peek() == Some(&c) {
                sal.next();
                false
            } else {
                true
            }
        })
        .collect()
}

#[inline]
fn sum_set_bits(mut bits: u64, xs: &[f64]) -> f64 {
    let mut acc = 0.0;
    while bits != 0 {
        acc += xs[bits.trailing_zeros() as usize];
        bits &= bits - 1;
    }
    acc
}

/// `dequantize(p) * x` straight from the bit planes.
///
/// Each scale group contributes `alpha * (2 * sum(x over set sign bits) -
/// sum(x over the group))`, so the planes are walked 64 bits at a time and
/// only set bits touch `x`.
pub fn binary_gemv(p: &PackedLayer, x: &[f32]) -> Result<Vec<f32>, PackError> {
    if x.len() != p.cols {
        return Err(PackError::DimensionMismatch(format!(
            "vector of length {} for {} columns",
            x.len(),
            p.cols
        )));
    }
    let n = p.rows;
    let mut y = vec![0.0f64; n];
    // Salient weights take one of `+-fl(alpha_o + alpha_r)` (planes agree)
    // or `+-fl(alpha_o - alpha_r)` (planes differ), matching `dequantize`.
    let mut plus_agree = vec![0.0f64; n];
    let mut sum_agree = vec![0.0f64; n];
    let mut plus_differ = vec![0.0f64; n];
    for (b, start) in p.blocks.iter().zip(p.block_starts()) {
        // Salient planes: one column of n row bits at a time.
        if b.k() > 0 {
            plus_agree.iter_mut().for_each(|v| *v = 0.0);
            sum_agree.iter_mut().for_each(|v| *v = 0.0);
            plus_differ.iter_mut().for_each(|v| *v = 0.0);
            let mut total = 0.0f64;
            for (j, &c) in b.salient_cols.iter().enumerate() {
                let xc = x[c as usize] as f64;
                total += xc;
                for r0 in (0..n).step_by(64) {
                    let len = (n - r0).min(64);
                    let valid = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
                    let wo = b.primary_signs.word(j * n + r0, len);
                    let agree = !(wo ^ b.residual_signs.word(j * n + r0, len)) & valid;
                    for (bits, acc) in [(agree, &mut sum_agree), (agree & wo, &mut plus_agree), (!agree & wo, &mut plus_differ)] {
                        let mut bits = bits;
                        while bits != 0 {
                            acc[r0 + bits.trailing_zeros() as usize] += xc;
                            bits &= bits - 1;
                        }
                    }
                }
            }
            for i in 0..n {
                let same = (b.alpha_o[i] + b.alpha_r[i]) as f64;
                let diff = (b.alpha_o[i] - b.alpha_r[i]) as f64;
                y[i] += same * (2.0 * plus_agree[i] - sum_agree[i])
                    + diff * (2.0 * plus_differ[i] - (total - sum_agree[i]));
            }
        }
        // Non-salient planes: one row of u column bits at a time.
        let xs: Vec<f64> = nonsalient_columns(b, start).into_iter().map(|c| x[c] as f64).collect();
        let u = xs.len();
        for (i, yi) in y.iter_mut().enumerate() {
            let (mut plus_s, mut tot_s, mut plus_c, mut tot_c) = (0.0, 0.0, 0.0, 0.0);
            for c0 in (0..u).step_by(64) {
                let len = (u - c0).min(64);
                let valid = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
                let m = b.mask.word(i * u + c0, len);
                let s = b.signs.word(i * u + c0, len);
                let chunk = &xs[c0..c0 + len];
                plus_s += sum_set_bits(m & s, chunk);
                tot_s += sum_set_bits(m, chunk);
                plus_c += sum_set_bits(!m & s & valid, chunk);
                tot_c += sum_set_bits(!m & valid, chunk);
            }
            *yi += b.alpha_s[i] as f64 * (2.0 * plus_s - tot_s) + b.alpha_c[i] as f64 * (2.0 * plus_c - tot_c);
        }
    }
    Ok(y.into_iter().map(|v| v as f32).collect())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], PackError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(PackError::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, PackError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, PackError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize, what: &'static str) -> Result<Vec<f32>, PackError> {
        let len = count.checked_mul(4).ok_or(PackError::Truncated(what))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn plane(&mut self, bits: usize, what: &'static str) -> Result<Bitplane, PackError> {
        let raw = self.take(bits.div_ceil(8), what)?.to_vec();
        Bitplane::from_bytes(bits, raw).ok_or_else(|| invalid(format!("nonzero padding bits in {what}")))
    }
}
