use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use billm::synth::excess_kurtosis;
use billm::{read_container, DenseMatrix, TensorContainer};
use billm_cli::args::Command as Sub;
use billm_cli::{commands, Cli};
use clap::Parser;
use tempfile::TempDir;

fn billm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_billm")).args(args).output().expect("spawn billm")
}

fn parse(args: &[&str]) -> Sub {
    Cli::try_parse_from(std::iter::once("billm").chain(args.iter().copied()))
        .expect("valid command line")
        .command
}

fn synth_to(dir: &TempDir, file: &str, extra: &[&str]) -> PathBuf {
    let path = dir.path().join(file);
    let p = path.to_str().unwrap();
    let mut args = vec!["synth", p];
    args.extend_from_slice(extra);
    let out = billm(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sweep_csv(args: &[&str]) -> Vec<Vec<f64>> {
    let Sub::Sweep(a) = parse(args) else { unreachable!() };
    let csv = commands::sweep(&a).unwrap();
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = synth_to(&dir, "a.bltc", &["--rows", "64", "--cols", "128", "--seed", "7"]);
    let b = synth_to(&dir, "b.bltc", &["--rows", "64", "--cols", "128", "--seed", "7"]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn synth_writes_weight_and_calib_pairs() {
    let dir = TempDir::new().unwrap();
    let p = synth_to(&dir, "a.bltc", &["--layers", "3", "--cols", "16", "--rows", "8", "--calib-rows", "20"]);
    let c = read_container(&std::fs::read(p).unwrap()).unwrap();
    assert_eq!(c.layer_names(), ["layer0", "layer1", "layer2"]);
    for n in c.layer_names() {
        assert_eq!(c.get(&format!("{n}.weight")).unwrap().shape(), (8, 16));
        assert_eq!(c.get(&format!("{n}.calib")).unwrap().shape(), (20, 16));
    }
}

#[test]
fn student_body_has_heavier_tails() {
    let dir = TempDir::new().unwrap();
    let kurt = |dist: &str| {
        let p = synth_to(&dir, &format!("{dist}.bltc"), &["--rows", "250", "--cols", "400", "--dist", dist]);
        let c = read_container(&std::fs::read(p).unwrap()).unwrap();
        excess_kurtosis(c.get("layer.weight").unwrap().data())
    };
    let (g, t) = (kurt("gauss"), kurt("student"));
    assert!(g.abs() < 0.1, "gauss excess kurtosis {g}");
    assert!(t > g + 1.0, "student {t} vs gauss {g}");
}

#[test]
fn llm_block_preset_has_seven_layers() {
    let Sub::Synth(a) = parse(&["synth", "unused", "--llm-block", "32", "--calib-rows", "8"]) else { unreachable!() };
    let c = commands::synth(&a).unwrap();
    let names = c.layer_names();
    assert_eq!(names.len(), 7);
    assert_eq!(c.get("layer.down_proj.weight").unwrap().shape(), (32, 86));
    assert_eq!(c.get("layer.gate_proj.weight").unwrap().shape(), (86, 32));
}

#[test]
fn quantize_toy_writes_packed_file_and_report() {
    let dir = TempDir::new().unwrap();
    let w = synth_to(&dir, "w.bltc", &["--salient-cols", "2", "--seed", "3"]);
    let out = dir.path().join("w.blpq");
    let report = dir.path().join("r.json");
    let o = billm(&["quantize", s(&w), "--calib", s(&w), "--out", s(&out), "--report", s(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let layers = json["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 1);
    let bits = layers[0]["param_bits"].as_f64().unwrap();
    assert!(bits > 1.0 && bits < 2.0, "{bits}");
    assert!(json.get("wall_time_s").is_none());
    assert!(billm::unpack(&std::fs::read(out).unwrap()).is_ok());
}

#[test]
fn quantize_without_hessian_source_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let w = synth_to(&dir, "w.bltc", &[]);
    assert_eq!(billm(&["quantize", s(&w)]).status.code(), Some(2));
}

#[test]
fn block_wider_than_layer_runs_single_block() {
    let dir = TempDir::new().unwrap();
    let w = synth_to(&dir, "w.bltc", &["--cols", "40", "--rows", "16"]);
    let Sub::Quantize(a) = parse(&["quantize", s(&w), "--calib", s(&w), "--block-size", "512"]) else { unreachable!() };
    let (report, layers) = commands::quantize(&a).unwrap();
    assert_eq!(layers[0].result.blocks.len(), 1);
    assert_eq!(report.layers[0].blocks[0].width, 40);
}

#[test]
fn multi_layer_report_sorted_and_complete() {
    let dir = TempDir::new().unwrap();
    let w = synth_to(&dir, "w.bltc", &["--layers", "4", "--cols", "32", "--rows", "8"]);
    let out = dir.path().join("packed");
    let Sub::Quantize(a) = parse(&["quantize", s(&w), "--identity-hessian", "--out-dir", s(&out), "--threads", "3"])
    else {
        unreachable!()
    };
    let (report, _) = commands::quantize(&a).unwrap();
    let names: Vec<_> = report.layers.iter().map(|l| l.name.as_str()).collect();
    assert_eq!(names, ["layer0", "layer1", "layer2", "layer3"]);
    assert!(report.layers.iter().all(|l| l.proxy_loss.is_none()));
    for n in names {
        assert!(out.join(format!("{n}.blpq")).is_file());
    }
}

#[test]
fn out_with_several_layers_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let w = synth_to(&dir, "w.bltc", &["--layers", "2"]);
    let out = dir.path().join("x.blpq");
    assert_eq!(billm(&["quantize", s(&w), "--identity-hessian", "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn invalid_config_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let w = synth_to(&dir, "w.bltc", &[]);
    let code = billm(&["quantize", s(&w), "--identity-hessian", "--salient-min", "0"]).status.code();
    assert_eq!(code, Some(2));
    assert_eq!(billm(&["synth", "x", "--dist", "uniform"]).status.code(), Some(2));
    assert_eq!(billm(&["sweep", s(&w), "--identity-hessian", "--what", "nothing"]).status.code(), Some(2));
}

#[test]
fn mismatched_calibration_is_data_error() {
    let dir = TempDir::new().unwrap();
    let w = synth_to(&dir, "w.bltc", &["--cols", "32"]);
    let x = synth_to(&dir, "x.bltc", &["--cols", "16"]);
    assert_eq!(billm(&["quantize", s(&w), "--calib", s(&x)]).status.code(), Some(3));
}

#[test]
fn eval_ranks_billm_first_on_planted_layer() {
    let dir = TempDir::new().unwrap();
    let w = synth_to(&dir, "w.bltc", &["--salient-cols", "3", "--seed", "11"]);
    let packed = dir.path().join("w.blpq");
    let json = dir.path().join("eval.json");
    assert!(billm(&["quantize", s(&w), "--calib", s(&w), "--out", s(&packed), "--block-size", "32"]).status.success());
    let o = billm(&["eval", s(&w), s(&packed), "--calib", s(&w), "--json", s(&json)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(json).unwrap()).unwrap();
    let rows = v[0]["rows"].as_array().unwrap();
    let methods: Vec<_> = rows.iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["billm", "rtn-1", "rtn-2", "rtn-3", "binarize"]);
    let mse: Vec<f64> = rows.iter().map(|r| r["mse"].as_f64().unwrap()).collect();
    assert!(mse[1..].iter().all(|&m| mse[0] < m), "{mse:?}");
}

#[test]
fn eval_on_zero_weights_is_all_zero() {
    let dir = TempDir::new().unwrap();
    let mut c = TensorContainer::new();
    c.insert("z.weight", DenseMatrix::zeros(4, 8)).unwrap();
    let w = dir.path().join("z.bltc");
    std::fs::write(&w, c.to_bytes()).unwrap();
    let packed = dir.path().join("z.blpq");
    assert!(billm(&["quantize", s(&w), "--identity-hessian", "--out", s(&packed)]).status.success());
    let Sub::Eval(a) = parse(&["eval", s(&w), s(&packed)]) else { unreachable!() };
    let layers = commands::eval(&a).unwrap();
    assert!(layers[0].rows.iter().all(|r| r.mse == 0.0), "{:?}", layers[0].rows);
}

#[test]
fn eval_shape_mismatch_is_data_error() {
    let dir = TempDir::new().unwrap();
    let w = synth_to(&dir, "w.bltc", &["--cols", "32"]);
    let other = synth_to(&dir, "o.bltc", &["--cols", "48"]);
    let packed = dir.path().join("o.blpq");
    assert!(billm(&["quantize", s(&other), "--identity-hessian", "--out", s(&packed)]).status.success());
    let o = billm(&["eval", s(&w), s(&packed)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shape mismatch"));
}

#[test]
fn breakpoint_sweep_curves_are_mostly_unimodal() {
    let dir = TempDir::new().unwrap();
    let w = synth_to(&dir, "w.bltc", &["--rows", "64", "--cols", "2048", "--seed", "5"]);
    let rows = sweep_csv(&["sweep", s(&w), "--calib", s(&w), "--what", "breakpoint"]);
    let blocks: usize = rows.iter().map(|r| r[0] as usize).max().unwrap() + 1;
    assert_eq!(blocks, 16);
    let mut unimodal = 0;
    for b in 0..blocks {
        let errors: Vec<f64> = rows.iter().filter(|r| r[0] as usize == b).map(|r| r[2]).collect();
        assert_eq!(errors.len(), 99);
        let curve = billm::BreakpointCurve {
            ratios: billm::splitter::default_grid(),
            errors,
        };
        if curve.local_minima() == 1 {
            unimodal += 1;
        }
    }
    assert!(unimodal * 100 >= 95 * blocks, "{unimodal}/{blocks}");
}

#[test]
fn salient_sweep_argmin_matches_planted_count() {
    let dir = TempDir::new().unwrap();
    for planted in 1..=4usize {
        for seed in 0..5u64 {
            let w = synth_to(
                &dir,
                "w.bltc",
                &["--cols", "32", "--salient-cols", &planted.to_string(), "--seed", &seed.to_string()],
            );
            let rows = sweep_csv(&["sweep", s(&w), "--calib", s(&w), "--what", "salient", "--block-size", "32", "--salient-min", "1"]);
            assert_eq!(rows.len(), 30);
            let best = rows.iter().fold((0.0, f64::INFINITY), |acc, r| if r[2] < acc.1 { (r[1], r[2]) } else { acc });
            assert_eq!(best.0 as usize, planted, "seed {seed}");
        }
    }
}

fn monotone_share(args_for: impl Fn(&Path) -> Vec<String>, column: usize) -> usize {
    let dir = TempDir::new().unwrap();
    (0..100u64)
        .filter(|seed| {
            let w = synth_to(&dir, "w.bltc", &["--seed", &seed.to_string()]);
            let args = args_for(&w);
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            let rows = sweep_csv(&refs);
            let e: Vec<f64> = rows.iter().map(|r| r[column]).collect();
            e.windows(2).all(|p| p[0] <= p[1])
        })
        .count()
}

#[test]
fn blocksize_sweep_finer_blocks_lower_error() {
    // Betas ascending: error must not decrease as the block grows.
    let weight_error = monotone_share(
        |w| ["sweep", s(w), "--identity-hessian", "--what", "blocksize"].map(String::from).to_vec(),
        1,
    );
    assert!(weight_error >= 90, "total_error monotone in {weight_error}/100");
    let proxy = monotone_share(
        |w| ["sweep", s(w), "--calib", s(w), "--what", "blocksize"].map(String::from).to_vec(),
        3,
    );
    assert!(proxy >= 90, "proxy_loss monotone in {proxy}/100");
}

#[test]
fn inspect_lists_blocks_and_salient_fraction() {
    let dir = TempDir::new().unwrap();
    let w = synth_to(&dir, "w.bltc", &["--salient-cols", "4", "--cols", "96"]);
    let packed = dir.path().join("w.blpq");
    assert!(billm(&["quantize", s(&w), "--calib", s(&w), "--out", s(&packed), "--block-size", "32"]).status.success());
    let o = billm(&["inspect", s(&packed), "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let blocks = v["blocks"].as_array().unwrap();
    assert_eq!(blocks.len(), 3);
    let k: u64 = blocks.iter().map(|b| b["n_star"].as_u64().unwrap()).sum();
    let (n, m) = (v["rows"].as_u64().unwrap(), v["cols"].as_u64().unwrap());
    assert_eq!(v["r_salient"].as_f64().unwrap(), (k * n) as f64 / (n * m) as f64);

    let text = String::from_utf8(billm(&["inspect", s(&packed)]).stdout).unwrap();
    assert!(text.contains("r_salient"));
    assert_eq!(text.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count(), 3);
}

#[test]
fn inspect_rejects_bad_magic() {
    let dir = TempDir::new().unwrap();
    let w = synth_to(&dir, "w.bltc", &[]);
    let packed = dir.path().join("w.blpq");
    assert!(billm(&["quantize", s(&w), "--identity-hessian", "--out", s(&packed)]).status.success());
    let mut bytes = std::fs::read(&packed).unwrap();
    bytes[1] = 0;
    std::fs::write(&packed, bytes).unwrap();
    let o = billm(&["inspect", s(&packed)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad magic"));
}
