//! Cross-checks against independent reference computations.

use jacspec::linalg::{accumulate_product, spectral_norm, svd_reference, DEFAULT_MAX_ITER, DEFAULT_TOL};
use jacspec::network::{finite_difference_jacobian, forward, jacobian, jacobian_log_norm_profile, synthetic_input};
use jacspec::pruning::{random_mask, Scaling};
use jacspec::randomness::{make_rng, sample_gaussian_matrix};
use jacspec::special::{erf, erf_inv};
use jacspec::{Error, Matrix, MlpConfig, Weights};

fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
}

fn net(n: usize, depth: usize, seed: u64) -> (MlpConfig, Weights) {
    let cfg = MlpConfig::new(n, n, depth).unwrap();
    let v = 2.0 / n as f64;
    let w = Weights::sample(&cfg, v, || make_rng(seed, 1000), |l| make_rng(seed, l as u64), |r| {
        sample_gaussian_matrix(r, n, n, v)
    })
    .unwrap();
    (cfg, w)
}

#[test]
fn spectral_norm_matches_svd_on_random_matrices() {
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let a: Matrix = sample_gaussian_matrix(&mut make_rng(42, i), 50, 50, 1.0).unwrap();
        let est = spectral_norm(&a, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let sv = svd_reference(&a).unwrap();
        worst = worst.max((est.value - sv[0]).abs() / sv[0]);
    }
    assert!(worst <= 1e-8, "worst relative error {worst:e}");
}

#[test]
fn svd_reference_reconstructs_frobenius_norm() {
    let a: Matrix = sample_gaussian_matrix(&mut make_rng(3, 3), 30, 17, 1.0).unwrap();
    let sv = svd_reference(&a).unwrap();
    assert_eq!(sv.len(), 17);
    let fro2: f64 = a.as_slice().iter().map(|v| v * v).sum();
    let s2: f64 = sv.iter().map(|s| s * s).sum();
    assert!((fro2 - s2).abs() / fro2 < 1e-12);
    assert!(sv.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn accumulated_product_matches_naive() {
    for seed in 0..10 {
        let factors: Vec<Matrix> =
            (0..12).map(|l| sample_gaussian_matrix(&mut make_rng(seed, l), 20, 20, 0.3).unwrap()).collect();
        let mut naive = factors[0].clone();
        for f in &factors[1..] {
            naive = naive_matmul(f, &naive);
        }
        let acc = accumulate_product(&factors).unwrap();
        let (log_norm, _) = acc.log_spectral_norm(DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let direct = spectral_norm(&naive, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap().value.ln();
        assert!((log_norm - direct).abs() <= 1e-9, "seed {seed}: {log_norm} vs {direct}");
    }
}

#[test]
fn accumulated_product_survives_overflow() {
    // 400 factors of 1e3·I would overflow any direct product
    let f = Matrix::identity(4).scale(1e3);
    let acc = accumulate_product(std::iter::repeat(&f).take(400)).unwrap();
    let (log_norm, _) = acc.log_spectral_norm(DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    assert!((log_norm - 400.0 * 1e3f64.ln()).abs() < 1e-9);
}

#[test]
fn erf_inverse_roundtrip_grid() {
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let x = -3.0 + 6.0 * i as f64 / 999.0;
        worst = worst.max((erf_inv(erf(x)).unwrap() - x).abs());
    }
    assert!(worst <= 1e-10, "worst roundtrip error {worst:e}");
}

#[test]
fn forward_matches_hand_rolled_recomputation() {
    let (cfg, w) = net(8, 3, 5);
    let x = synthetic_input::<f64>(&mut make_rng(5, 99), 8);
    let trace = forward(&cfg, &w, &x).unwrap();
    let mut y: Vec<f64> = (0..8).map(|i| (0..8).map(|j| w.w_in.get(i, j) * x[j]).sum()).collect();
    assert_eq!(trace.preactivations[0], y);
    for l in 0..3 {
        let h: Vec<f64> = y.iter().map(|&v| v.max(0.0)).collect();
        y = (0..8).map(|i| (0..8).map(|j| w.hidden[l].get(i, j) * h[j]).sum()).collect();
        assert_eq!(trace.preactivations[l + 1], y);
        let ind: Vec<bool> = y.iter().map(|&v| v > 0.0).collect();
        assert_eq!(trace.indicators[l + 1], ind);
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut seed = 0;
    while checked < 20 {
        seed += 1;
        let (cfg, w) = net(8, 4, seed);
        let x = synthetic_input::<f64>(&mut make_rng(seed, 77), 8);
        let fd = match finite_difference_jacobian(&cfg, &w, &x, 1, 1e-6) {
            Ok(m) => m,
            Err(Error::KinkProximity { .. }) => continue,
            Err(e) => panic!("{e}"),
        };
        let trace = forward(&cfg, &w, &x).unwrap();
        let j = jacobian(&trace, &w, 1).unwrap().to_dense();
        worst = worst.max(j.sub(&fd).unwrap().max_abs());
        checked += 1;
    }
    assert!(worst <= 1e-6, "worst deviation {worst:e}");
}

#[test]
fn finite_differences_exact_in_linear_regime() {
    let n = 5;
    let cfg = MlpConfig::new(n, n, 3).unwrap();
    // positive weights and input keep every unit active
    let w = Weights::new(
        Matrix::identity(n),
        (0..3).map(|l| Matrix::from_fn(n, n, |i, j| 0.1 + 0.05 * ((i + 2 * j + l) % 4) as f64)).collect(),
    );
    let x = vec![1.0; n];
    let fd = finite_difference_jacobian(&cfg, &w, &x, 1, 1e-4).unwrap();
    let exact = naive_matmul(&w.hidden[2], &naive_matmul(&w.hidden[1], &w.hidden[0]));
    assert!(fd.sub(&exact).unwrap().max_abs() < 1e-10);
}

#[test]
fn scalar_chain_closed_form() {
    let (n, depth, c) = (4, 6, 1.7);
    let cfg = MlpConfig::new(n, n, depth).unwrap();
    let w = Weights::new(Matrix::identity(n), vec![Matrix::identity(n).scale(c); depth]);
    let trace = forward(&cfg, &w, &[1.0, 2.0, 3.0, 4.0]).unwrap();
    for k in 1..=depth {
        let (ln, _) = jacobian(&trace, &w, k).unwrap().log_spectral_norm(DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((ln - (depth - k + 1) as f64 * c.ln()).abs() < 1e-12);
    }
}

#[test]
fn chain_rule_recursion() {
    let (cfg, w) = net(12, 6, 8);
    let x = synthetic_input::<f64>(&mut make_rng(8, 1), 12);
    let trace = forward(&cfg, &w, &x).unwrap();
    for k in 1..6 {
        let direct = jacobian(&trace, &w, k).unwrap().to_dense();
        let factor = w.hidden[k - 1].scale_columns(&trace.indicator_values(k - 1)).unwrap();
        let via = naive_matmul(&jacobian(&trace, &w, k + 1).unwrap().to_dense(), &factor);
        let a = spectral_norm(&direct, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap().value.ln();
        let b = spectral_norm(&via, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap().value.ln();
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn masked_jacobian_equals_premultiplied_weights() {
    let (cfg, w) = net(10, 4, 9);
    let masks: Vec<_> = w
        .hidden
        .iter()
        .enumerate()
        .map(|(l, m)| random_mask(&mut make_rng(9, 500 + l as u64), m, 0.4, Scaling::Analytic).unwrap().mask)
        .collect();
    let premultiplied =
        Weights::new(w.w_in.clone(), w.hidden.iter().zip(&masks).map(|(m, b)| m.hadamard(b.matrix()).unwrap()).collect());
    let masked = w.with_masks(masks);
    let x = synthetic_input::<f64>(&mut make_rng(9, 2), 10);
    let a = jacobian(&forward(&cfg, &masked, &x).unwrap(), &masked, 1).unwrap();
    let b = jacobian(&forward(&cfg, &premultiplied, &x).unwrap(), &premultiplied, 1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn profile_equals_truncated_networks_bitwise() {
    let (cfg, w) = net(16, 12, 10);
    let x = synthetic_input::<f64>(&mut make_rng(10, 3), 16);
    let depths = [2, 5, 9, 12];
    let profile = jacobian_log_norm_profile(&cfg, &w, &x, &depths, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    for p in profile {
        let cut = MlpConfig::new(16, 16, p.depth).unwrap();
        let tw = Weights::new(w.w_in.clone(), w.hidden[..p.depth].to_vec());
        let direct = jacspec::network::jacobian_log_norm_with(&cut, &tw, &x, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap().0;
        assert_eq!(p.log_norm.to_bits(), direct.to_bits());
    }
}

#[test]
fn critical_net_log_norm_band() {
    let n = 256;
    let mut total = 0.0;
    for seed in 0..10 {
        let (cfg, w) = net(n, 20, 300 + seed);
        let x = synthetic_input::<f64>(&mut make_rng(300 + seed, 7), n);
        total += jacspec::jacobian_log_norm(&cfg, &w, &x).unwrap();
    }
    let mean = total / 10.0;
    assert!((0.0..=20f64.ln() + 2.0).contains(&mean), "mean {mean}");
}
