use lyapunov_learning::diffcore::finite_diff_check_coords;
use lyapunov_learning::dynsys::{lorenz_variational_step, oracle_map, LorenzParams, OracleMap};
use lyapunov_learning::lyap::{
    largest_exponent, mgs_qr, run_transient, spectrum, spectrum_of_map, spectrum_of_network,
    QrAccumulator,
};
use lyapunov_learning::{Mat, NetworkParams, Plain};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat_strategy(d: usize) -> impl Strategy<Value = Mat<f64>> {
    prop::collection::vec(-1.5f64..1.5, d * d).prop_map(move |v| Mat::from_vec(d, d, v))
}

fn sequence_strategy() -> impl Strategy<Value = Vec<Mat<f64>>> {
    (1usize..=5, 1usize..=100)
        .prop_flat_map(|(d, t)| prop::collection::vec(mat_strategy(d), t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sum_of_exponents_is_mean_log_determinant(js in sequence_strategy()) {
        let dets: Vec<f64> = js.iter().map(|j| j.det().abs()).collect();
        prop_assume!(dets.iter().all(|&d| d > 1e-6));
        let s = spectrum(&Plain, &js).unwrap();
        let want = dets.iter().map(|d| d.ln()).sum::<f64>() / js.len() as f64;
        prop_assert!((s.sum - want).abs() < 1e-8, "{} vs {want}", s.sum);
        let total: f64 = s.exponents.iter().sum();
        prop_assert!((total - s.sum).abs() < 1e-12);
    }

    #[test]
    fn exponents_are_sorted_and_history_has_shape(js in sequence_strategy()) {
        prop_assume!(js.iter().all(|j| j.det().abs() > 1e-6));
        let s = spectrum(&Plain, &js).unwrap();
        prop_assert!(s.exponents.windows(2).all(|w| w[0] >= w[1]));
        prop_assert_eq!(s.log_diag_history.len(), js.len());
        prop_assert!(s.log_diag_history.iter().all(|r| r.len() == js[0].rows()));
        for (i, &e) in s.exponents.iter().enumerate() {
            let mean = s.log_diag_history.iter().map(|r| r[i]).sum::<f64>() / js.len() as f64;
            prop_assert!((mean - e).abs() < 1e-10);
        }
    }

    #[test]
    fn frame_stays_orthonormal(js in sequence_strategy()) {
        prop_assume!(js.iter().all(|j| j.det().abs() > 1e-6));
        let d = js[0].rows();
        let mut acc = QrAccumulator::new(&Plain, d);
        for j in &js {
            acc.push(&Plain, j).unwrap();
            let q = acc.frame();
            let qtq = q.transpose().matmul(&Plain, q);
            for r in 0..d {
                for c in 0..d {
                    let want = if r == c { 1.0 } else { 0.0 };
                    prop_assert!((qtq.get(r, c) - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn scaling_every_jacobian_shifts_every_exponent(js in sequence_strategy(), c in 0.1f64..10.0) {
        prop_assume!(js.iter().all(|j| j.det().abs() > 1e-6));
        let base = spectrum(&Plain, &js).unwrap();
        let scaled: Vec<Mat<f64>> = js.iter().map(|j| j.scaled(c)).collect();
        let s = spectrum(&Plain, &scaled).unwrap();
        for (a, b) in s.exponents.iter().zip(&base.exponents) {
            prop_assert!((a - b - c.ln()).abs() < 1e-10, "{a} {b} {}", c.ln());
        }
    }

    #[test]
    fn qr_factors_reproduce_the_input(a in mat_strategy(4)) {
        prop_assume!(a.det().abs() > 1e-6);
        let (q, diag) = mgs_qr(&Plain, &a, 0).unwrap();
        prop_assert!(diag.iter().all(|&r| r > 0.0));
        // column j of A has norm at least R_jj's residual and Q^T A is upper triangular
        let r = q.transpose().matmul(&Plain, &a);
        for i in 0..4 {
            prop_assert!((r.get(i, i) - diag[i]).abs() < 1e-10);
            for j in 0..i {
                prop_assert!(r.get(i, j).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn constant_diagonal_jacobians_give_log_entries() {
    let js = vec![Mat::diag(&[2.0, 0.5, 0.25]); 50];
    let s = spectrum(&Plain, &js).unwrap();
    let want = [2f64.ln(), 0.5f64.ln(), 0.25f64.ln()];
    for (a, b) in s.exponents.iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn upper_triangular_jacobian_converges_to_its_diagonal() {
    let j = Mat::from_rows(&[
        vec![3.0, 0.7, -1.1],
        vec![0.0, 1.0, 0.4],
        vec![0.0, 0.0, 0.2],
    ]);
    let s = spectrum(&Plain, &vec![j; 10_000]).unwrap();
    let want = [3f64.ln(), 0.0, 0.2f64.ln()];
    for (a, b) in s.exponents.iter().zip(want) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn logistic_map_at_four_has_log_two() {
    let map = oracle_map("logistic").unwrap();
    let x = run_transient(&Plain, &map, &map.default_start(), 1000).unwrap();
    let l = largest_exponent(&Plain, &map, &x, 100_000, 1).unwrap();
    assert!((l - 2f64.ln()).abs() < 5e-3, "{l}");
}

/// Fine-grid Benettin estimate from the variational equation, independent of
/// the tape and of the discrete map's Jacobian.
fn lorenz_variational_oracle(dt: f64, steps: usize, transient: usize) -> f64 {
    let p = LorenzParams::classic();
    let mut s = [1.0, 1.0, 1.0];
    let mut phi = Mat::identity(3);
    for _ in 0..transient {
        s = lorenz_variational_step(s, &phi, &p, dt).0;
    }
    let mut log_sum = 0.0;
    for t in 0..steps {
        let (ns, nphi) = lorenz_variational_step(s, &phi, &p, dt);
        let (q, r) = mgs_qr(&Plain, &nphi, t).unwrap();
        log_sum += r[0].ln();
        s = ns;
        phi = q;
    }
    log_sum / (steps as f64 * dt)
}

#[test]
fn lorenz_map_exponent_matches_variational_oracle() {
    let oracle = lorenz_variational_oracle(0.001, 1_000_000, 10_000);
    assert!((oracle - 0.905).abs() < 0.05 * 0.905, "oracle {oracle}");
    let map = oracle_map("lorenz").unwrap();
    let s = spectrum_of_map(&Plain, &map, &map.default_start(), 100_000, 1000).unwrap();
    let rate = s.exponents[0] / 0.01;
    assert!((rate - oracle).abs() < 0.05 * oracle, "{rate} vs {oracle}");
    // dissipative flow: trace of the Jacobian is -(σ + 1 + β)
    let trace = -(10.0 + 1.0 + 8.0 / 3.0);
    assert!((s.sum / 0.01 - trace).abs() < 0.05, "{}", s.sum / 0.01);
}

#[test]
fn single_vector_agrees_with_qr_on_generic_maps() {
    let logistic = oracle_map("logistic").unwrap();
    let x = run_transient(&Plain, &logistic, &logistic.default_start(), 1000).unwrap();
    let a = largest_exponent(&Plain, &logistic, &x, 5000, 1).unwrap();
    let b = spectrum_of_map(&Plain, &logistic, &x, 5000, 0).unwrap().exponents[0];
    assert!((a - b).abs() < 2e-2, "{a} {b}");

    let mut net = NetworkParams::init(&[3, 16, 3], 11).unwrap();
    let flat: Vec<f64> = net.flat().iter().map(|w| 2.5 * w).collect();
    net = net.with_flat(&flat).unwrap();
    let x = run_transient(&Plain, &net, &[0.1, -0.2, 0.3], 1000).unwrap();
    for renorm in [1, 5] {
        let a = largest_exponent(&Plain, &net, &x, 5000, renorm).unwrap();
        let b = spectrum_of_network(&Plain, &net, &x, 5000, 0).unwrap().exponents[0];
        assert!((a - b).abs() < 2e-2, "renorm {renorm}: {a} {b}");
    }
}

#[test]
fn largest_exponent_gradient_matches_differences() {
    let net = NetworkParams::init(&[3, 6, 3], 3).unwrap();
    let flat: Vec<f64> = net.flat().iter().map(|w| 2.0 * w).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let coords: Vec<usize> = (0..24).map(|_| rng.gen_range(0..flat.len())).collect();
    let x0 = [0.3, -0.4, 0.2];
    let qr = finite_diff_check_coords(
        |t, w| {
            let n = net.with_flat(w)?;
            let x = t.leaves(&x0);
            Ok(spectrum_of_network(t, &n, &x, 10, 0)?.exponents[0])
        },
        &flat,
        1e-6,
        &coords,
    )
    .unwrap();
    let single = finite_diff_check_coords(
        |t, w| {
            let n = net.with_flat(w)?;
            let x = t.leaves(&x0);
            largest_exponent(t, &n, &x, 10, 1)
        },
        &flat,
        1e-6,
        &coords,
    )
    .unwrap();
    assert!(qr < 1e-4 && single < 1e-4, "{qr} {single}");
}

#[test]
fn oracle_linear_map_is_exact() {
    let map = OracleMap::Linear(Mat::diag(&[1.5, 0.5, 0.25]));
    let s = spectrum_of_map(&Plain, &map, &[1.0, 1.0, 1.0], 30, 0).unwrap();
    assert!((s.exponents[0] - 1.5f64.ln()).abs() < 1e-12);
    assert!((s.exponents[2] - 0.25f64.ln()).abs() < 1e-12);
}
