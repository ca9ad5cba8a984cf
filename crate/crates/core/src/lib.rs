//! One-bit post-training quantization of linear-layer weights.
//!
//! A layer is processed in blocks of columns. In each block the columns with
//! the highest Hessian-weighted sensitivity are coded with two sign planes
//! (a binarization plus a binarization of its residual), and the remaining
//! bell-shaped weights are split at a searched magnitude threshold into a
//! concentrated and a sparse group, each with its own per-row scale. After a
//! block is coded its error is pushed onto the columns to its right through
//! the upper Cholesky factor of the damped inverse Hessian.
//!
//! ```
//! use billm::{factor, gram_hessian, quantize_layer, synth, QuantConfig};
//!
//! let spec = synth::SynthSpec {
//!     rows: 16, cols: 32, dist: synth::BodyDist::Gauss,
//!     salient_cols: 2, calib_rows: 64, calib_corr: 0.0,
//! };
//! let (w, x) = synth::synth_layer(&spec, 1);
//! let hessian = factor(&gram_hessian(&x).unwrap(), 0.01).unwrap();
//! let cfg = QuantConfig { block_size: 16, ..QuantConfig::default() };
//! let layer = quantize_layer(&w, &hessian, &cfg).unwrap();
//! assert_eq!(layer.blocks.len(), 2);
//! assert!(layer.param_bits() > 1.0 && layer.param_bits() < 2.0);
//! ```

pub mod binarizer;
pub mod bitplane;
pub mod container;
mod error;
pub mod hessian;
pub mod matrix;
pub mod packfmt;
pub mod pipeline;
pub mod splitter;
pub mod synth;

pub use binarizer::{binarize, reconstruct, residual_binarize, Binarization, ResidualBinarization};
pub use bitplane::Bitplane;
pub use container::{read_container, write_container, ContainerError, TensorContainer};
pub use error::QuantError;
pub use hessian::{factor, gram_hessian, HessianError, HessianState};
pub use matrix::{frobenius_sq, proxy_loss, DenseMatrix, MatrixError};
pub use packfmt::{binary_gemv, bit_budget, dequantize, pack, unpack, BitBudget, PackError, PackedLayer};
pub use pipeline::{
    compensate, quantize_block, quantize_layer, rtn_quantize, select_salient_columns, sensitivity,
    BlockQuantResult, LayerQuantResult, QuantConfig, SensitivityKind, SensitivityMap,
};
pub use splitter::{search_breakpoint, split_binarize, split_error, BreakpointCurve, SplitBinarization};
