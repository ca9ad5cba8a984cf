//! JSON shapes written by `quantize`, `eval` and `inspect`.

use billm::{LayerQuantResult, PackedLayer, QuantConfig, SensitivityKind};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub engine: &'static str,
    pub version: &'static str,
    pub config: ConfigEcho,
    /// Sorted by layer name.
    pub layers: Vec<LayerRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub block_size: usize,
    pub percdamp: f64,
    pub salient_min: usize,
    pub salient_max: usize,
    pub grid_len: usize,
    pub sensitivity: &'static str,
    pub compensate: bool,
    pub identity_hessian: bool,
    pub max_calib_rows: usize,
}

impl ConfigEcho {
    pub fn new(cfg: &QuantConfig, identity_hessian: bool, max_calib_rows: usize) -> Self {
        Self {
            block_size: cfg.block_size,
            percdamp: cfg.percdamp,
            salient_min: cfg.salient_min,
            salient_max: cfg.salient_max,
            grid_len: cfg.grid.len(),
            sensitivity: match cfg.sensitivity {
                SensitivityKind::CholeskyDiag => "cholesky",
                SensitivityKind::InverseDiag => "inverse",
            },
            compensate: cfg.compensate,
            identity_hessian,
            max_calib_rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub frobenius_error: f64,
    pub mse: f64,
    /// `||X (W - W_hat)^T||^2`; absent without calibration rows.
    pub proxy_loss: Option<f64>,
    pub lambda: f64,
    pub r_salient: f64,
    pub param_bits: f64,
    pub storage_bits: f64,
    pub total_bits: f64,
    pub blocks: Vec<BlockRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockRecord {
    pub start: usize,
    pub width: usize,
    pub n_star: usize,
    pub breakpoint: f32,
}

impl LayerRecord {
    pub fn new(name: &str, layer: &LayerQuantResult, lambda: f64, proxy_loss: Option<f64>) -> Self {
        Self {
            name: name.to_owned(),
            rows: layer.rows,
            cols: layer.cols,
            frobenius_error: layer.total_error,
            mse: layer.mse(),
            proxy_loss,
            lambda,
            r_salient: layer.r_salient(),
            param_bits: layer.param_bits(),
            storage_bits: layer.storage_bits(),
            total_bits: layer.budget.total_bits,
            blocks: layer
                .blocks
                .iter()
                .map(|b| BlockRecord {
                    start: b.start,
                    width: b.width(),
                    n_star: b.n_star(),
                    breakpoint: b.breakpoint(),
                })
                .collect(),
        }
    }
}

impl RunReport {
    /// Parameter-weighted mean of the per-layer `param_bits`.
    pub fn mean_param_bits(&self) -> f64 {
        let (num, den) = self.layers.iter().fold((0.0, 0.0), |(n, d), l| {
            let size = (l.rows * l.cols) as f64;
            (n + l.param_bits * size, d + size)
        });
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub method: String,
    pub mse: f64,
    pub frobenius_error: f64,
    pub proxy_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalLayer {
    pub name: String,
    pub rows: Vec<EvalRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InspectReport {
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    pub block_count: usize,
    pub r_salient: f64,
    pub param_bits: f64,
    pub storage_bits: f64,
    pub total_bits: f64,
    pub blocks: Vec<BlockRecord>,
}

impl InspectReport {
    pub fn new(p: &PackedLayer) -> Self {
        let budget = p.budget();
        Self {
            rows: p.rows,
            cols: p.cols,
            block_size: p.block_size,
            block_count: p.blocks.len(),
            r_salient: budget.r_salient,
            param_bits: budget.param_bits,
            storage_bits: budget.storage_bits,
            total_bits: budget.total_bits,
            blocks: p
                .blocks
                .iter()
                .zip(p.block_starts())
                .map(|(b, start)| BlockRecord {
                    start,
                    width: b.width,
                    n_star: b.k(),
                    breakpoint: b.breakpoint,
                })
                .collect(),
        }
    }
}
