use proptest::prelude::*;
use rshe::heat_kernel::{kernel, kernel_r};
use rshe::ldp::{condition_a_suite, rate_function, ConditionAConfig, ControlLattice, PerturbationFamily, RateOptions};
use rshe::skeleton::{solve_skeleton, CoefficientParams, Coefficients, SkeletonOptions};
use rshe::spde::{fd_skeleton, moment_norms, simulate_stream, Ensemble};
use rshe::{Control, Exec, Field, Grid, WeightParams, Window};

fn sine(grid: &Grid, amplitude: f64) -> Vec<f64> {
    grid.nodes().iter().map(|x| amplitude * (std::f64::consts::PI * x / grid.length()).sin().max(0.0)).collect()
}

fn coefficient_strategy() -> impl Strategy<Value = Coefficients> {
    (-1.0f64..1.0, -0.5f64..0.5, 0.0f64..1.5, 0.1f64..1.0, -1.0f64..1.0, -1.0f64..1.0, prop::bool::ANY).prop_map(
        |(a, b, big_r, delta, c, d, tilt)| {
            let r = if tilt { 0.5 } else { 0.0 };
            Coefficients::new(CoefficientParams { a, b, big_r, delta, c, d, r }).unwrap()
        },
    )
}

fn separable(grid: Grid, amplitude: f64, omega: f64) -> Control {
    Control::from_fn(grid, |t, x| amplitude * (omega * t).cos() * (-(x - 1.5f64).powi(2)).exp())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_nonnegative_and_vanishes_on_the_boundary(t in 1e-4f64..5.0, x in 0.0f64..10.0, y in 0.0f64..10.0) {
        prop_assert!(kernel(t, x, y).unwrap() >= 0.0);
        prop_assert_eq!(kernel(t, 0.0, y).unwrap(), 0.0);
        prop_assert_eq!(kernel(t, x, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn tilted_kernel_identity(t in 1e-3f64..3.0, x in 0.0f64..6.0, y in 0.0f64..6.0, r in -1.0f64..1.0) {
        let lhs = kernel_r(t, x, y, r).unwrap() * (-r * y).exp();
        let rhs = (-r * x).exp() * kernel(t, x, y).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-14 * rhs.abs().max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn skeleton_is_nonnegative_complementary_and_deterministic(
        coeffs in coefficient_strategy(),
        amp in 0.0f64..3.0,
        ctrl in -3.0f64..3.0,
        omega in 0.0f64..6.0,
    ) {
        let g = Grid::new(0.5, 4.0, 60, 20).unwrap();
        let u0 = sine(&g, amp);
        let gd = separable(g, ctrl, omega);
        let opts = SkeletonOptions::default();
        let a = solve_skeleton(&gd, &u0, &coeffs, &opts).unwrap();
        let b = solve_skeleton(&gd, &u0, &coeffs, &opts).unwrap();
        prop_assert!(a.u.min_value() >= -1e-10);
        let paired: f64 = a.u.values().iter().zip(a.eta.values()).map(|(u, m)| u * m).sum();
        let scale = a.eta.total_mass() * a.u.norm(WeightParams::default());
        prop_assert!(paired <= 1e-8 * scale + f64::MIN_POSITIVE);
        prop_assert_eq!(a.u, b.u);
    }

    #[test]
    fn spde_paths_are_nonnegative_with_complementary_mass(
        coeffs in coefficient_strategy(),
        seed in 0u64..1000,
        eps in 0.0f64..0.5,
    ) {
        let g = Grid::new(0.1, 3.0, 100, 30).unwrap();
        let u0 = sine(&g, 0.5);
        let path = simulate_stream(&g, eps, &coeffs, &u0, None, seed, 0).unwrap();
        prop_assert!(path.u.min_value() >= 0.0);
        for (u, m) in path.u.values().iter().zip(path.eta.values()) {
            prop_assert!(*m >= 0.0);
            prop_assert!(*m == 0.0 || *u == 0.0);
        }
    }

    #[test]
    fn zero_amplitude_perturbation_gives_zero_discrepancy(coeffs in coefficient_strategy(), ctrl in -2.0f64..2.0) {
        let g = Grid::new(0.25, 4.0, 64, 20).unwrap();
        let cfg = ConditionAConfig {
            n_list: vec![2, 4, 8],
            family: PerturbationFamily::Oscillatory { amplitude: 0.0 },
            ..Default::default()
        };
        let rep = condition_a_suite(&separable(g, ctrl, 1.0), &sine(&g, 1.0), &coeffs, &cfg).unwrap();
        prop_assert!(rep.entries.iter().all(|e| e.value == 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn rate_is_dominated_by_any_feasible_control(values in prop::collection::vec(-1.0f64..1.0, 9)) {
        let g = Grid::new(0.25, 3.0, 40, 15).unwrap();
        let u0 = sine(&g, 2.0);
        let coeffs = Coefficients::new(CoefficientParams { a: -0.5, big_r: 1.0, delta: 0.2, c: 0.5, d: 0.3, ..Default::default() }).unwrap();
        let lattice = ControlLattice::new(g, 2, 2).unwrap();
        let gd = lattice.control(&values).unwrap();
        let opts = RateOptions { time_cells: 2, space_cells: 2, schedule: vec![1.0, 1e2, 1e4], ..Default::default() };
        let h = opts.forward.apply(&gd, &u0, &coeffs).unwrap();
        let res = rate_function(&h, &u0, &coeffs, &opts, Some(&gd)).unwrap();
        let bound = 0.5 * gd.cm_norm().powi(2);
        prop_assert!(res.value >= 0.0);
        prop_assert!(res.value <= 1.05 * bound + 1e-12, "{} vs {}", res.value, bound);
    }
}

#[test]
fn doubling_the_domain_leaves_weighted_norms_unchanged() {
    let coeffs =
        Coefficients::new(CoefficientParams { a: -0.5, b: 0.2, big_r: 0.8, delta: 0.5, c: 0.4, d: 0.5, r: 1.0 })
            .unwrap();
    let w = WeightParams { r: 1.0 };
    let solve = |length: f64, nx: usize| {
        let g = Grid::new(0.5, length, 200, nx).unwrap();
        let u0: Vec<f64> = g.nodes().iter().map(|x| x * (-2.0 * x).exp()).collect();
        let gd = Control::from_fn(g, |t, x| (2.0 * t).sin() * (-x).exp());
        let sk = solve_skeleton(&gd, &u0, &coeffs, &SkeletonOptions::default()).unwrap().u.norm(w);
        let fd = fd_skeleton(&g, &coeffs, &u0, Some(&gd)).unwrap().0.norm(w);
        (sk, fd)
    };
    let (sk1, fd1) = solve(8.0, 40);
    let (sk2, fd2) = solve(16.0, 80);
    assert!((sk1 / sk2 - 1.0).abs() < 1e-3, "{sk1} vs {sk2}");
    assert!((fd1 / fd2 - 1.0).abs() < 1e-3, "{fd1} vs {fd2}");
}

#[test]
fn median_distance_grows_with_intensity() {
    let g = Grid::new(0.25, 4.0, 100, 40).unwrap();
    let coeffs =
        Coefficients::new(CoefficientParams { a: -0.5, b: 0.2, big_r: 0.8, delta: 0.3, c: 0.5, d: 0.7, r: 0.0 })
            .unwrap();
    let u0 = sine(&g, 2.0);
    let reference = fd_skeleton(&g, &coeffs, &u0, None).unwrap().0;
    let run = Ensemble {
        grid: g,
        epsilons: vec![1e-4, 1e-3, 1e-2, 1e-1],
        coeffs: &coeffs,
        u0: &u0,
        control: None,
        reference: Some(&reference),
        weight: WeightParams::default(),
        window: Window::full(&g),
        probes: Vec::new(),
        master_seed: 17,
        n_paths: 101,
        exec: Exec::default(),
    };
    let paths = run.run().unwrap();
    let medians: Vec<f64> = (0..4)
        .map(|k| {
            let mut d: Vec<f64> = paths.iter().map(|p| p.distance[k]).collect();
            d.sort_by(f64::total_cmp);
            d[d.len() / 2]
        })
        .collect();
    assert!(medians.windows(2).all(|m| m[0] <= m[1]), "{medians:?}");
}

#[test]
fn moments_are_stable_across_sample_sizes() {
    let g = Grid::new(0.25, 3.0, 100, 30).unwrap();
    let coeffs =
        Coefficients::new(CoefficientParams { a: -0.5, b: 0.2, big_r: 0.8, delta: 0.3, c: 0.5, d: 0.7, r: 0.0 })
            .unwrap();
    let u0 = sine(&g, 1.0);
    let fields: Vec<Field> =
        (0..800).map(|id| simulate_stream(&g, 0.1, &coeffs, &u0, None, 23, id).unwrap().u).collect();
    let window = Window::full(&g);
    for p in [2.0, 4.0, 8.0] {
        let half = moment_norms(&fields[..400], None, WeightParams::default(), &window, p).unwrap();
        let full = moment_norms(&fields, None, WeightParams::default(), &window, p).unwrap();
        assert!(full.mean.is_finite() && full.std_error < 0.05 * full.mean, "p={p}: {full:?}");
        let se = (half.std_error.powi(2) + full.std_error.powi(2)).sqrt();
        assert!((half.mean - full.mean).abs() <= 4.0 * se, "p={p}: {half:?} vs {full:?}");
    }
}
