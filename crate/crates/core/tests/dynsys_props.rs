use lyapunov_learning::diffcore::central_difference;
use lyapunov_learning::dynsys::{
    generate_regime_shift, lorenz_jacobian, lorenz_rhs, lorenz_step, LorenzParams, OracleMap,
    RegimeShiftSpec,
};
use lyapunov_learning::lyap::StateMap;
use lyapunov_learning::Plain;
use proptest::prelude::*;

const CLASSIC: LorenzParams = LorenzParams::classic();

fn integrate(s0: [f64; 3], dt: f64, n: usize) -> [f64; 3] {
    (0..n).fold(s0, |s, _| lorenz_step(s, &CLASSIC, dt).unwrap())
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn halving_the_step_shrinks_error_sixteenfold() {
    // fixed horizon of 0.4 time units against a reference at dt / 100
    let s0 = [1.0, 2.0, 20.0];
    let dt = 0.02;
    let reference = integrate(s0, dt / 100.0, 2000);
    let coarse = dist(integrate(s0, dt, 20), reference);
    let fine = dist(integrate(s0, dt / 2.0, 40), reference);
    let factor = coarse / fine;
    assert!((12.0..=20.0).contains(&factor), "factor {factor}");
}

#[test]
fn fourth_order_convergence_between_two_step_sizes() {
    let s0 = [-3.0, 1.0, 25.0];
    let reference = integrate(s0, 1e-5, 100_000);
    let e2 = dist(integrate(s0, 1e-2, 100), reference);
    let e3 = dist(integrate(s0, 1e-3, 1000), reference);
    let order = (e2 / e3).log10();
    assert!(order > 3.5, "observed order {order} ({e2} -> {e3})");
}

#[test]
fn difference_quotient_tends_to_the_vector_field() {
    let s = [2.0, -1.0, 15.0];
    let f = lorenz_rhs(&Plain, &s, &CLASSIC);
    let err = |dt: f64| {
        let n = lorenz_step(s, &CLASSIC, dt).unwrap();
        (0..3).map(|i| ((n[i] - s[i]) / dt - f[i]).abs()).fold(0.0, f64::max)
    };
    let (a, b) = (err(1e-2), err(1e-3));
    assert!(b < a && a / b > 8.0, "{a} {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn analytic_vector_field_jacobian_matches_differences(
        x in -20.0f64..20.0, y in -25.0f64..25.0, z in 0.0f64..50.0
    ) {
        let s = [x, y, z];
        let j = lorenz_jacobian(s, &CLASSIC);
        for i in 0..3 {
            let g = central_difference(|p| Ok(lorenz_rhs(&Plain, p, &CLASSIC)[i]), &s, 1e-5).unwrap();
            for c in 0..3 {
                prop_assert!((g[c] - j.get(i, c)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn discrete_map_jacobian_matches_differences(
        x in -20.0f64..20.0, y in -25.0f64..25.0, z in 0.0f64..50.0
    ) {
        let map = OracleMap::Lorenz { params: CLASSIC, dt: 0.01 };
        let s = [x, y, z];
        let j = StateMap::<Plain>::jacobian(&map, &Plain, &s).unwrap();
        for i in 0..3 {
            let g = central_difference(|p| Ok(lorenz_step([p[0], p[1], p[2]], &CLASSIC, 0.01)?[i]), &s, 1e-5).unwrap();
            for c in 0..3 {
                prop_assert!((g[c] - j.get(i, c)).abs() < 1e-7 * (1.0 + j.get(i, c).abs()));
            }
        }
    }
}

#[test]
fn regime_shift_layout_bounds_and_scaling() {
    let raw_spec = RegimeShiftSpec {
        scale: 1.0,
        ..Default::default()
    };
    let raw = generate_regime_shift(&raw_spec).unwrap();
    let n = raw_spec.n_per_regime;
    assert_eq!(raw.len(), 2 * n);
    assert_eq!(raw.shift_index, Some(n));
    for s in &raw.states[n..] {
        assert!(s[0].abs() < 25.0 && s[1].abs() < 25.0, "{s:?}");
        assert!(s[2] > 0.0 && s[2] < 50.0, "{s:?}");
    }
    // the shift is one ordinary step under the second parameter set
    let last: [f64; 3] = raw.states[n - 1].clone().try_into().unwrap();
    let next = lorenz_step(last, &raw_spec.params_b, raw_spec.dt).unwrap();
    assert_eq!(raw.states[n], next.to_vec());

    let scaled = generate_regime_shift(&RegimeShiftSpec::default()).unwrap();
    let inv = 1.0 / 30.0;
    for (a, b) in raw.states.iter().zip(&scaled.states) {
        let want: Vec<f64> = a.iter().map(|v| v * inv).collect();
        assert_eq!(&want, b);
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let spec = RegimeShiftSpec {
        n_per_regime: 40,
        transient: 5,
        seed: 3,
        ..Default::default()
    };
    let traj = generate_regime_shift(&spec).unwrap();
    let dir = std::env::temp_dir().join(format!("traj-rt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    traj.save(&dir, "series").unwrap();
    let back = lyapunov_learning::dynsys::Trajectory::load(&dir.join("series.csv")).unwrap();
    assert_eq!(back.states, traj.states);
    assert_eq!(back.shift_index, traj.shift_index);
    assert_eq!(back.dt, traj.dt);
    std::fs::remove_dir_all(&dir).unwrap();
}
