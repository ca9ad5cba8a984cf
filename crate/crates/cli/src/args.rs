use std::path::PathBuf;

use billm::synth::BodyDist;
use billm::{QuantConfig, SensitivityKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "billm", version, about = "1-bit post-training quantization of linear-layer weights")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write seeded synthetic weights and calibration rows to a container.
    Synth(SynthArgs),
    /// Quantize every layer of a container and write packed layers.
    Quantize(QuantizeArgs),
    /// Compare packed layers against round-to-nearest and plain binarization.
    Eval(EvalArgs),
    /// Dump search curves or a block-size sweep as CSV.
    Sweep(SweepArgs),
    /// Summarize a packed layer.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output container.
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub rows: usize,
    #[arg(long, default_value_t = 128)]
    pub cols: usize,
    #[arg(long, default_value = "gauss", value_parser = parse_dist)]
    pub dist: BodyDist,
    /// Planted high-magnitude columns per layer.
    #[arg(long, default_value_t = 0)]
    pub salient_cols: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Layer name; with `--layers N > 1` it becomes a prefix with an index suffix.
    #[arg(long, default_value = "layer")]
    pub name: String,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = 256)]
    pub calib_rows: usize,
    /// AR(1) correlation between neighbouring calibration features.
    #[arg(long, default_value_t = 0.0)]
    pub calib_corr: f64,
    /// Emit the seven linear layers of one decoder block with this hidden
    /// size instead of `--layers` planted layers.
    #[arg(long, value_name = "HIDDEN", conflicts_with_all = ["rows", "cols", "dist", "salient_cols", "layers", "calib_corr"])]
    pub llm_block: Option<usize>,
}

fn parse_dist(s: &str) -> Result<BodyDist, String> {
    s.parse().map_err(|e: billm::synth::UnknownDistribution| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SensitivityArg {
    /// Squared diagonal of the Cholesky factor.
    Cholesky,
    /// Squared diagonal of the damped inverse Hessian.
    Inverse,
}

/// Engine settings shared by every command that runs the quantizer.
#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// Container holding `<layer>.calib` entries (may be the weights file).
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Use an identity factor instead of a calibrated Hessian.
    #[arg(long)]
    pub identity_hessian: bool,
    #[arg(long, default_value_t = 128)]
    pub block_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub percdamp: f64,
    #[arg(long, default_value_t = 3)]
    pub salient_min: usize,
    #[arg(long, default_value_t = 30)]
    pub salient_max: usize,
    /// Break-point grid `{j / steps}`; 100 is the percent grid, 10 the tenths grid.
    #[arg(long, default_value_t = 100)]
    pub grid_steps: usize,
    #[arg(long, value_enum, default_value_t = SensitivityArg::Cholesky)]
    pub sensitivity: SensitivityArg,
    /// Skip error compensation between blocks.
    #[arg(long)]
    pub no_compensate: bool,
    /// Use at most this many calibration rows per layer.
    #[arg(long, default_value_t = 4096)]
    pub max_calib_rows: usize,
    /// Round-to-nearest bit widths reported by `eval`.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub baseline_bits: Vec<u32>,
    /// Quantize only this layer.
    #[arg(long)]
    pub layer: Option<String>,
}

impl EngineArgs {
    pub fn config(&self) -> QuantConfig {
        QuantConfig {
            block_size: self.block_size,
            percdamp: self.percdamp,
            salient_min: self.salient_min,
            salient_max: self.salient_max,
            grid: billm::splitter::uniform_grid(self.grid_steps),
            baseline_bits: self.baseline_bits.clone(),
            sensitivity: match self.sensitivity {
                SensitivityArg::Cholesky => SensitivityKind::CholeskyDiag,
                SensitivityArg::Inverse => SensitivityKind::InverseDiag,
            },
            compensate: !self.no_compensate,
        }
    }
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Container holding `<layer>.weight` entries.
    pub weights: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Packed output for a single-layer container.
    #[arg(long, conflicts_with = "out_dir")]
    pub out: Option<PathBuf>,
    /// Directory receiving one `<layer>.blpq` per layer.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// JSON run report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Include wall time in the JSON report.
    #[arg(long)]
    pub timing: bool,
    /// Worker threads for the layer pool (0 = available parallelism).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub weights: PathBuf,
    /// A packed file, or a directory of `<layer>.blpq` files.
    pub packed: PathBuf,
    /// Container with `<layer>.calib` entries for the proxy loss.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub baseline_bits: Vec<u32>,
    /// Write the comparison as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long, default_value_t = 4096)]
    pub max_calib_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Breakpoint,
    Salient,
    Blocksize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub weights: PathBuf,
    #[arg(long, value_enum)]
    pub what: SweepKind,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Block sizes for `--what blocksize`.
    #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
    pub betas: Vec<usize>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub packed: PathBuf,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}
