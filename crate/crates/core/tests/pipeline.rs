use billm::hessian::HessianState;
use billm::splitter::default_grid;
use billm::synth::{calibration, planted_weights, random_matrix, rng, BodyDist};
use billm::{
    binarize, compensate, factor, frobenius_sq, gram_hessian, pack, quantize_block, quantize_layer, sensitivity,
    select_salient_columns, DenseMatrix, QuantConfig,
};
use proptest::prelude::*;

fn cfg(block_size: usize, lo: usize, hi: usize) -> QuantConfig {
    QuantConfig {
        block_size,
        salient_min: lo,
        salient_max: hi,
        ..QuantConfig::default()
    }
}

/// Plain per-row binarization error of the selected columns plus that of the
/// rest, evaluated independently of the library's search.
fn two_group_oracle(w: &DenseMatrix, salient: &[usize]) -> f64 {
    let rest: Vec<usize> = (0..w.cols()).filter(|c| !salient.contains(c)).collect();
    let mut total = 0.0;
    for group in [salient.to_vec(), rest] {
        if group.is_empty() {
            continue;
        }
        for i in 0..w.rows() {
            let mags: Vec<f64> = group.iter().map(|&c| w.get(i, c).abs() as f64).collect();
            let a = mags.iter().sum::<f64>() / mags.len() as f64;
            total += mags.iter().map(|m| (m - a).powi(2)).sum::<f64>();
        }
    }
    total
}

#[test]
fn single_step_compensation_matches_quadratic_minimizer() {
    // For loss d^T H d with d_1 fixed, the optimal d_2 is -(H_12 / H_22) d_1.
    let h = DenseMatrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
    for percdamp in [1e-10, 1e-8, 1e-6] {
        let st = factor(&h, percdamp).unwrap();
        let (w1, w2, q) = (0.7f32, -0.3f32, 1.0f32);
        let wb = DenseMatrix::from_rows(&[[w1]]).unwrap();
        let rec = DenseMatrix::from_rows(&[[q]]).unwrap();
        let wr = DenseMatrix::from_rows(&[[w2]]).unwrap();
        let out = compensate(&wr, &wb, &rec, st.hc(), 0..1, 1..2).unwrap();
        let d1 = (q - w1) as f64;
        let want = w2 as f64 - 2.0 / 3.0 * d1;
        assert!((out.get(0, 0) as f64 - want).abs() < 1e-5, "percdamp {percdamp}: {} vs {want}", out.get(0, 0));
    }
}

#[test]
fn identity_hessian_layer_equals_independent_blocks() {
    let mut g = rng(31);
    let w = random_matrix(&mut g, 8, 8, BodyDist::Laplace, 1.0);
    let c = cfg(4, 1, 3);
    let layer = quantize_layer(&w, &HessianState::identity(8), &c).unwrap();
    assert_eq!(layer.blocks.len(), 2);
    for (b, start) in layer.blocks.iter().zip([0, 4]) {
        let solo = quantize_block(&w.column_range(start, start + 4), &[1.0; 4], &c).unwrap();
        assert_eq!(b.reconstruction, solo.reconstruction);
        assert_eq!(b.salient_cols, solo.salient_cols);
        assert_eq!(b.start, start);
    }
}

#[test]
fn two_dominant_columns_selected_by_exhaustive_search() {
    let mut g = rng(32);
    let mut w = random_matrix(&mut g, 6, 8, BodyDist::Gauss, 0.1);
    let mut data = w.clone().into_data();
    for i in 0..6 {
        data[i * 8 + 2] = if i % 2 == 0 { 5.0 } else { -5.0 };
        data[i * 8 + 5] = if i % 3 == 0 { -4.0 } else { 4.0 };
    }
    w = DenseMatrix::new(6, 8, data).unwrap();
    let c = cfg(8, 1, 7);
    let smap = sensitivity(&w, &[1.0; 8]).unwrap();
    let sel = select_salient_columns(&w, &smap, &c).unwrap();

    // Rank by column sum of w^2, then scan every prefix length.
    let mut order: Vec<usize> = (0..8).collect();
    let score = |c: usize| (0..6).map(|i| (w.get(i, c) as f64).powi(2)).sum::<f64>();
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    let (mut best_k, mut best_e) = (0, f64::INFINITY);
    for k in 1..=7 {
        let e = two_group_oracle(&w, &order[..k]);
        let (got_k, got_e) = sel.curve[k - 1];
        assert_eq!(got_k, k);
        assert!((got_e - e).abs() < 1e-9 * e.max(1.0), "k={k}: {got_e} vs {e}");
        if e < best_e {
            best_e = e;
            best_k = k;
        }
    }
    assert_eq!(best_k, 2);
    assert_eq!(sel.n_star, 2);
    assert_eq!(sel.cols, vec![2, 5]);
}

#[test]
fn toy_block_is_coded_exactly() {
    let w = DenseMatrix::from_rows(&[[10.0, 0.1, -0.1, 0.2], [-10.0, 0.1, 0.1, -0.2]]).unwrap();
    let res = quantize_block(&w, &[1.0; 4], &cfg(128, 1, 3)).unwrap();
    assert_eq!(res.salient_cols, vec![0]);
    assert_eq!(res.breakpoint(), 0.1f32);
    assert_eq!(res.block_error, 0.0);
    assert_eq!(res.reconstruction, w);
    let plain = frobenius_sq(&w, &binarize(&w).unwrap().reconstruct()).unwrap();
    assert!(plain > 146.0);
}

#[test]
fn compensation_touches_only_later_blocks() {
    let mut g = rng(33);
    let (w, _) = planted_weights(&mut g, 16, 48, BodyDist::Gauss, 3);
    let x = calibration(&mut g, 96, 48, 0.7);
    let h = factor(&gram_hessian(&x).unwrap(), 0.01).unwrap();
    let c = cfg(16, 1, 8);
    let base = quantize_layer(&w, &h, &c).unwrap();

    let mut data = w.clone().into_data();
    for i in 0..16 {
        for j in 32..48 {
            data[i * 48 + j] *= -1.5;
        }
    }
    let perturbed = quantize_layer(&DenseMatrix::new(16, 48, data).unwrap(), &h, &c).unwrap();
    assert_eq!(base.blocks[0], perturbed.blocks[0]);
    assert_eq!(base.blocks[1], perturbed.blocks[1]);
    assert_ne!(base.blocks[2].reconstruction, perturbed.blocks[2].reconstruction);
}

#[test]
fn layer_is_deterministic() {
    let mut g = rng(34);
    let (w, _) = planted_weights(&mut g, 12, 40, BodyDist::Student, 2);
    let x = calibration(&mut g, 64, 40, 0.5);
    let h = factor(&gram_hessian(&x).unwrap(), 0.01).unwrap();
    let c = cfg(16, 1, 8);
    let a = pack(&quantize_layer(&w, &h, &c).unwrap()).unwrap();
    let b = pack(&quantize_layer(&w, &h, &c).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn default_config_uses_percent_grid() {
    assert_eq!(QuantConfig::default().grid, default_grid());
}

fn layer_case() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 1usize..10, 2usize..40, 2usize..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn blocks_partition_columns_and_budget_adds_up((seed, rows, cols, beta) in layer_case()) {
        let mut g = rng(seed);
        let w = random_matrix(&mut g, rows, cols, BodyDist::Laplace, 1.0);
        let x = calibration(&mut g, 2 * cols, cols, 0.3);
        let h = factor(&gram_hessian(&x).unwrap(), 0.01).unwrap();
        let c = cfg(beta, 1, 30);
        let layer = quantize_layer(&w, &h, &c).unwrap();

        let mut next = 0;
        let mut salient = 0;
        for b in &layer.blocks {
            prop_assert_eq!(b.start, next);
            let mut all: Vec<usize> = b.salient_cols.iter().chain(&b.nonsalient_cols()).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..b.width()).collect::<Vec<_>>());
            prop_assert!(b.n_star() >= 1 && b.n_star() < b.width());
            prop_assert!(b.width() >= 2);
            next += b.width();
            salient += b.n_star() * rows;
        }
        prop_assert_eq!(next, cols);

        let r = salient as f64 / (rows * cols) as f64;
        prop_assert!((layer.r_salient() - r).abs() < 1e-12);
        prop_assert!((layer.param_bits() - (2.0 * r + (1.0 - r))).abs() < 1e-12);
        prop_assert!((layer.storage_bits() - (1.0 + 1.0 / beta as f64)).abs() < 1e-12);
        prop_assert!((layer.budget.total_bits - layer.param_bits() - layer.storage_bits()).abs() < 1e-12);
        prop_assert_eq!(layer.total_error, frobenius_sq(&w, &layer.reconstruction).unwrap());
    }
}
