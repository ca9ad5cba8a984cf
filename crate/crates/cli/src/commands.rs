use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use billm::synth::{self, SynthSpec};
use billm::{
    binarize, dequantize, factor, frobenius_sq, gram_hessian, pack, proxy_loss, quantize_layer, read_container,
    rtn_quantize, unpack, DenseMatrix, HessianState, LayerQuantResult, QuantConfig, TensorContainer,
};
use rayon::prelude::*;

use crate::args::{EngineArgs, EvalArgs, InspectArgs, QuantizeArgs, SweepArgs, SweepKind, SynthArgs};
use crate::report::{ConfigEcho, EvalLayer, EvalRow, InspectReport, LayerRecord, RunReport};
use crate::{DataError, UsageError};

pub fn synth(args: &SynthArgs) -> Result<TensorContainer> {
    let mut c = TensorContainer::new();
    if let Some(hidden) = args.llm_block {
        if hidden < 2 {
            return Err(UsageError("--llm-block needs a hidden size of at least 2".into()).into());
        }
        for (name, w, x) in synth::llm_block(hidden, args.calib_rows, args.seed) {
            c.insert(format!("{}.{name}.weight", args.name), w)?;
            c.insert(format!("{}.{name}.calib", args.name), x)?;
        }
        return Ok(c);
    }
    if args.rows < 2 || args.cols < 2 {
        return Err(UsageError(format!("rows and cols must be at least 2, got {}x{}", args.rows, args.cols)).into());
    }
    if !(args.calib_corr.abs() < 1.0) {
        return Err(UsageError(format!("--calib-corr must lie in (-1, 1), got {}", args.calib_corr)).into());
    }
    let spec = SynthSpec {
        rows: args.rows,
        cols: args.cols,
        dist: args.dist,
        salient_cols: args.salient_cols,
        calib_rows: args.calib_rows,
        calib_corr: args.calib_corr,
    };
    for i in 0..args.layers {
        let name = if args.layers == 1 {
            args.name.clone()
        } else {
            format!("{}{i}", args.name)
        };
        let (w, x) = synth::synth_layer(&spec, args.seed.wrapping_add(i as u64));
        c.insert(format!("{name}.weight"), w)?;
        c.insert(format!("{name}.calib"), x)?;
    }
    Ok(c)
}

pub(crate) fn load(path: &Path) -> Result<TensorContainer> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_container(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// One layer ready for the engine.
pub struct LayerInput {
    pub name: String,
    pub weight: DenseMatrix,
    pub calib: Option<DenseMatrix>,
}

fn cap_rows(m: &DenseMatrix, cap: usize) -> DenseMatrix {
    if m.rows() <= cap {
        return m.clone();
    }
    DenseMatrix::new(cap, m.cols(), m.data()[..cap * m.cols()].to_vec()).expect("prefix of a valid matrix")
}

/// Loads `<layer>.weight` entries, optionally restricted to one layer, with
/// their `<layer>.calib` partners when a calibration container is given.
pub fn load_layers(weights: &Path, calib: Option<&Path>, only: Option<&str>, cap: usize) -> Result<Vec<LayerInput>> {
    let wc = load(weights)?;
    let cc = match calib {
        Some(p) if p == weights => None,
        Some(p) => Some(load(p)?),
        None => None,
    };
    let calib_source = if calib.is_some() { Some(cc.as_ref().unwrap_or(&wc)) } else { None };
    let mut names = wc.layer_names();
    if let Some(only) = only {
        if !names.iter().any(|n| n == only) {
            return Err(DataError(format!("no layer {only:?} in {}", weights.display())).into());
        }
        names = vec![only.to_owned()];
    }
    if names.is_empty() {
        return Err(DataError(format!("{} holds no .weight entries", weights.display())).into());
    }
    names
        .into_iter()
        .map(|name| {
            let weight = wc.get(&format!("{name}.weight")).expect("listed layer").clone();
            let calib = match calib_source {
                None => None,
                Some(src) => {
                    let x = src
                        .get(&format!("{name}.calib"))
                        .ok_or_else(|| DataError(format!("no calibration entry {name}.calib")))?;
                    if x.cols() != weight.cols() {
                        return Err(DataError(format!(
                            "layer {name}: calibration has {} columns, weight has {}",
                            x.cols(),
                            weight.cols()
                        ))
                        .into());
                    }
                    Some(cap_rows(x, cap))
                }
            };
            Ok(LayerInput { name, weight, calib })
        })
        .collect()
}

fn check_engine(engine: &EngineArgs) -> Result<QuantConfig> {
    if engine.calib.is_none() && !engine.identity_hessian {
        return Err(UsageError("either --calib or --identity-hessian is required".into()).into());
    }
    if engine.grid_steps < 2 {
        return Err(UsageError("--grid-steps must be at least 2".into()).into());
    }
    let cfg = engine.config();
    cfg.validate()?;
    Ok(cfg)
}

fn hessian_for(input: &LayerInput, engine: &EngineArgs) -> Result<HessianState> {
    match (&input.calib, engine.identity_hessian) {
        (Some(x), false) => {
            let h = gram_hessian(x).with_context(|| format!("layer {}: building Hessian", input.name))?;
            factor(&h, engine.percdamp).with_context(|| format!("layer {}: factoring Hessian", input.name))
        }
        _ => Ok(HessianState::identity(input.weight.cols())),
    }
}

/// A quantized layer with its report entry.
pub struct QuantizedLayer {
    pub name: String,
    pub result: LayerQuantResult,
    pub record: LayerRecord,
}

pub fn quantize_one(input: &LayerInput, engine: &EngineArgs, cfg: &QuantConfig) -> Result<QuantizedLayer> {
    let hessian = hessian_for(input, engine)?;
    let result =
        quantize_layer(&input.weight, &hessian, cfg).with_context(|| format!("layer {}: quantizing", input.name))?;
    let proxy = match &input.calib {
        Some(x) => Some(proxy_loss(x, &input.weight, &result.reconstruction)?),
        None => None,
    };
    let record = LayerRecord::new(&input.name, &result, hessian.lambda(), proxy);
    Ok(QuantizedLayer {
        name: input.name.clone(),
        result,
        record,
    })
}

pub fn quantize(args: &QuantizeArgs) -> Result<(RunReport, Vec<QuantizedLayer>)> {
    let started = Instant::now();
    let cfg = check_engine(&args.engine)?;
    let inputs = load_layers(
        &args.weights,
        args.engine.calib.as_deref(),
        args.engine.layer.as_deref(),
        args.engine.max_calib_rows,
    )?;
    if args.out.is_some() && inputs.len() > 1 {
        return Err(UsageError(format!("--out takes a single layer; {} layers found, use --out-dir", inputs.len())).into());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build()?;
    let layers: Vec<QuantizedLayer> =
        pool.install(|| inputs.par_iter().map(|l| quantize_one(l, &args.engine, &cfg)).collect::<Result<_>>())?;

    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    for l in &layers {
        let path = match (&args.out, &args.out_dir) {
            (Some(p), _) => p.clone(),
            (None, Some(dir)) => dir.join(format!("{}.blpq", l.name)),
            (None, None) => continue,
        };
        let bytes = pack(&l.result).with_context(|| format!("layer {}: packing", l.name))?;
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }

    let report = RunReport {
        engine: "billm",
        version: env!("CARGO_PKG_VERSION"),
        config: ConfigEcho::new(&cfg, args.engine.identity_hessian, args.engine.max_calib_rows),
        layers: layers.iter().map(|l| l.record.clone()).collect(),
        wall_time_s: args.timing.then(|| started.elapsed().as_secs_f64()),
    };
    if let Some(path) = &args.report {
        fs::write(path, report_json(&report)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok((report, layers))
}

pub fn report_json(report: &RunReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn render_run(report: &RunReport, elapsed: f64) -> String {
    let mut out = String::new();
    writeln!(out, "{:<24} {:>11} {:>10} {:>10} {:>12} {:>12}", "layer", "shape", "param", "storage", "mse", "proxy").unwrap();
    for l in &report.layers {
        let proxy = l.proxy_loss.map_or_else(|| "-".to_owned(), |p| format!("{p:.4e}"));
        writeln!(
            out,
            "{:<24} {:>11} {:>10.4} {:>10.4} {:>12.4e} {:>12}",
            l.name,
            format!("{}x{}", l.rows, l.cols),
            l.param_bits,
            l.storage_bits,
            l.mse,
            proxy
        )
        .unwrap();
    }
    writeln!(out, "mean param bits {:.4}, {:.2}s", report.mean_param_bits(), elapsed).unwrap();
    out
}

fn packed_for(path: &Path, name: &str, many: bool) -> PathBuf {
    if path.is_dir() {
        path.join(format!("{name}.blpq"))
    } else {
        debug_assert!(!many);
        path.to_path_buf()
    }
}

pub fn eval(args: &EvalArgs) -> Result<Vec<EvalLayer>> {
    for &b in &args.baseline_bits {
        if !(1..=8).contains(&b) {
            return Err(UsageError(format!("baseline bit width {b} outside 1..=8")).into());
        }
    }
    let inputs = load_layers(&args.weights, args.calib.as_deref(), args.layer.as_deref(), args.max_calib_rows)?;
    if inputs.len() > 1 && !args.packed.is_dir() {
        return Err(UsageError("several layers need a directory of packed files, or pick one with --layer".into()).into());
    }
    let many = inputs.len() > 1;
    inputs
        .iter()
        .map(|input| {
            let path = packed_for(&args.packed, &input.name, many);
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let packed = unpack(&bytes).with_context(|| format!("decoding {}", path.display()))?;
            let w = &input.weight;
            if (packed.rows, packed.cols) != w.shape() {
                return Err(DataError(format!(
                    "shape mismatch for {}: packed {}x{}, weights {}x{}",
                    input.name,
                    packed.rows,
                    packed.cols,
                    w.rows(),
                    w.cols()
                ))
                .into());
            }
            let mut candidates = vec![("billm".to_owned(), dequantize(&packed))];
            for &b in &args.baseline_bits {
                candidates.push((format!("rtn-{b}"), rtn_quantize(w, b)?));
            }
            candidates.push(("binarize".to_owned(), binarize(w)?.reconstruct()));
            let rows = candidates
                .into_iter()
                .map(|(method, w_hat)| {
                    let frob = frobenius_sq(w, &w_hat)?;
                    let proxy = input.calib.as_ref().map(|x| proxy_loss(x, w, &w_hat)).transpose()?;
                    Ok(EvalRow {
                        method,
                        mse: frob / (w.rows() * w.cols()) as f64,
                        frobenius_error: frob,
                        proxy_loss: proxy,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(EvalLayer {
                name: input.name.clone(),
                rows,
            })
        })
        .collect()
}

pub fn render_eval(layers: &[EvalLayer]) -> String {
    let mut out = String::new();
    for l in layers {
        writeln!(out, "{}", l.name).unwrap();
        writeln!(out, "  {:<10} {:>12} {:>12}", "method", "mse", "proxy").unwrap();
        for r in &l.rows {
            let proxy = r.proxy_loss.map_or_else(|| "-".to_owned(), |p| format!("{p:.4e}"));
            writeln!(out, "  {:<10} {:>12.4e} {:>12}", r.method, r.mse, proxy).unwrap();
        }
    }
    out
}

pub fn sweep(args: &SweepArgs) -> Result<String> {
    let cfg = check_engine(&args.engine)?;
    let inputs = load_layers(
        &args.weights,
        args.engine.calib.as_deref(),
        args.engine.layer.as_deref(),
        args.engine.max_calib_rows,
    )?;
    let [input] = inputs.as_slice() else {
        return Err(UsageError(format!("sweep runs on one layer; {} found, pick one with --layer", inputs.len())).into());
    };
    let mut csv = String::new();
    match args.what {
        SweepKind::Breakpoint => {
            let q = quantize_one(input, &args.engine, &cfg)?;
            csv.push_str("block,ratio,error\n");
            for (b, block) in q.result.blocks.iter().enumerate() {
                let curve = &block.breakpoint_curve;
                for (r, e) in curve.ratios.iter().zip(&curve.errors) {
                    writeln!(csv, "{b},{r},{e}").unwrap();
                }
            }
        }
        SweepKind::Salient => {
            let q = quantize_one(input, &args.engine, &cfg)?;
            csv.push_str("block,k,error\n");
            for (b, block) in q.result.blocks.iter().enumerate() {
                for (k, e) in &block.salient_curve {
                    writeln!(csv, "{b},{k},{e}").unwrap();
                }
            }
        }
        SweepKind::Blocksize => {
            if args.betas.is_empty() {
                return Err(UsageError("--betas is empty".into()).into());
            }
            let hessian = hessian_for(input, &args.engine)?;
            csv.push_str("beta,total_error,param_bits");
            csv.push_str(if input.calib.is_some() { ",proxy_loss\n" } else { "\n" });
            for &beta in &args.betas {
                let c = QuantConfig { block_size: beta, ..cfg.clone() };
                c.validate()?;
                let r = quantize_layer(&input.weight, &hessian, &c)?;
                write!(csv, "{beta},{},{}", r.total_error, r.param_bits()).unwrap();
                if let Some(x) = &input.calib {
                    write!(csv, ",{}", proxy_loss(x, &input.weight, &r.reconstruction)?).unwrap();
                }
                csv.push('\n');
            }
        }
    }
    if let Some(path) = &args.out {
        fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(csv)
}

pub fn inspect(args: &InspectArgs) -> Result<InspectReport> {
    let bytes = fs::read(&args.packed).with_context(|| format!("reading {}", args.packed.display()))?;
    let packed = unpack(&bytes).with_context(|| format!("decoding {}", args.packed.display()))?;
    Ok(InspectReport::new(&packed))
}

pub fn render_inspect(r: &InspectReport) -> String {
    let mut out = String::new();
    writeln!(out, "shape        {} x {}", r.rows, r.cols).unwrap();
    writeln!(out, "block size   {}", r.block_size).unwrap();
    writeln!(out, "blocks       {}", r.block_count).unwrap();
    writeln!(out, "r_salient    {:.6}", r.r_salient).unwrap();
    writeln!(out, "param bits   {:.6}", r.param_bits).unwrap();
    writeln!(out, "storage bits {:.6}", r.storage_bits).unwrap();
    writeln!(out, "total bits   {:.6}", r.total_bits).unwrap();
    writeln!(out, "{:>6} {:>7} {:>6} {:>4} {:>12}", "block", "start", "width", "k", "p*").unwrap();
    for (i, b) in r.blocks.iter().enumerate() {
        writeln!(out, "{i:>6} {:>7} {:>6} {:>4} {:>12.6e}", b.start, b.width, b.n_star, b.breakpoint).unwrap();
    }
    out
}
