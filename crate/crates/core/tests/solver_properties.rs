use kgard::experiments::{
    border_boost_weights, run_monte_carlo, ExperimentConfig, Protocol, BORDER_BOOST_COUNT, BORDER_BOOST_FACTOR,
};
use kgard::noise::{corrupt_with, make_sinc_dataset, seeded_rng, InlierNoise, NoiseSpec};
use kgard::{
    build_design, gram_matrix, kgard_fit, predict, regularized_ls_solve, Dataset, KernelParams, Kgard, Kgard32,
    KgardConfig, KgardConfig32, PointSet, Regularizer, StopNorm,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn jittered(n: usize, seed: u64) -> (PointSet<f64>, f64) {
    let mut rng = seeded_rng(seed);
    let xs: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random_range(-0.25..0.25)) / n as f64).collect();
    (PointSet::from_scalars(&xs), rng.random_range(0.8..2.0) / n as f64)
}

fn instance(n: usize, seed: u64, impulses: usize) -> (DMatrix<f64>, DVector<f64>) {
    let (pts, sigma) = jittered(n, seed);
    let g = gram_matrix(&pts, &KernelParams::new(sigma).unwrap()).unwrap();
    let mut rng = seeded_rng(seed ^ 0x5a5a);
    let mut y = DVector::from_fn(n, |i, _| (6.0 * pts.point(i)[0]).sin() + 0.1 * rng.random_range(-1.0..1.0));
    for _ in 0..impulses {
        let j = rng.random_range(0..n);
        y[j] += if rng.random::<bool>() { 20.0 } else { -20.0 };
    }
    (g, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn greedy_loop_invariants(n in 8usize..40, seed in any::<u64>(), impulses in 0usize..5, log_lambda in -2.0f64..1.0, eps in 0.0f64..3.0) {
        let (g, y) = instance(n, seed, impulses);
        let lambda = 10f64.powf(log_lambda);
        let sol = Kgard::new(g, KgardConfig::new(lambda, eps)).unwrap().fit(&y).unwrap();
        let cap = n / 2;
        prop_assert!(sol.iterations <= cap);
        prop_assert_eq!(sol.residual_history.len(), sol.iterations + 1);
        if !sol.truncated {
            let last = *sol.residual_history.last().unwrap();
            prop_assert!(last <= *sol.threshold_history.last().unwrap());
        }
        for w in sol.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "objective rose: {} -> {}", w[0], w[1]);
        }
        let mut order = sol.selection_order();
        order.sort_unstable();
        order.dedup();
        prop_assert_eq!(order.len(), sol.iterations);
        for &(j, _) in &sol.outliers {
            prop_assert!(sol.residual[j].abs() <= 1e-9, "residual {} at selected {}", sol.residual[j], j);
        }
    }

    #[test]
    fn zero_threshold_always_terminates(n in 4usize..30, seed in any::<u64>()) {
        let (g, y) = instance(n, seed, 2);
        let sol = Kgard::new(g, KgardConfig::new(0.5, 0.0).with_max_selections(n)).unwrap().fit(&y).unwrap();
        prop_assert!(sol.iterations <= n);
    }

    #[test]
    fn linf_stop_rule_is_respected(n in 8usize..30, seed in any::<u64>(), eps in 0.5f64..5.0) {
        let (g, y) = instance(n, seed, 3);
        let cfg = KgardConfig::new(0.1, eps).with_stop_norm(StopNorm::Linf).with_max_selections(n);
        let sol = Kgard::new(g, cfg).unwrap().fit(&y).unwrap();
        if !sol.truncated {
            prop_assert!(sol.residual.amax() <= *sol.threshold_history.last().unwrap());
        }
    }
}

#[test]
fn single_impulse_matches_exhaustive_search() {
    let n = 8;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let pts = PointSet::from_scalars(&xs);
    let params = KernelParams::new(0.3).unwrap();
    let g = gram_matrix(&pts, &params).unwrap();
    let mut y = DVector::from_fn(n, |i, _| (3.0 * xs[i]).cos());
    y[3] += 15.0;

    let lambda = 0.1;
    let mut best = (f64::INFINITY, usize::MAX);
    let mut clean_level = 0.0;
    for j in 0..n {
        let mut sys = build_design(g.clone(), Regularizer::CoefficientNorm).unwrap();
        sys.add_outlier(j).unwrap();
        let z = regularized_ls_solve(&sys, &y, lambda, None).unwrap();
        let r = sys.residual(&z, &y).norm();
        if r < best.0 {
            best = (r, j);
        }
        if j == 3 {
            clean_level = r;
        }
    }
    assert_eq!(best.1, 3);
    let sys = build_design(g, Regularizer::CoefficientNorm).unwrap();
    let z0 = regularized_ls_solve(&sys, &y, lambda, None).unwrap();
    let start_level = sys.residual(&z0, &y).norm();
    let eps = 0.5 * (clean_level + start_level);

    let sol = kgard_fit(&Dataset::new(pts, y).unwrap(), &params, &KgardConfig::new(lambda, eps)).unwrap();
    assert_eq!(sol.support(), vec![3]);
}

#[test]
fn regularizers_agree_as_lambda_vanishes() {
    let n = 20;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let pts = PointSet::from_scalars(&xs);
    let params = KernelParams::new(0.04).unwrap();
    let y = DVector::from_fn(n, |i, _| (5.0 * xs[i]).sin() + xs[i]);
    let data = Dataset::new(pts.clone(), y).unwrap();
    let fit = |reg| {
        let sol = kgard_fit(&data, &params, &KgardConfig::new(1e-10, 1e9).with_regularizer(reg)).unwrap();
        sol.predict(&pts, &pts, &params).unwrap()
    };
    let a = fit(Regularizer::CoefficientNorm);
    let b = fit(Regularizer::RkhsNorm);
    assert!((&a - &b).amax() <= 1e-4, "{}", (&a - &b).amax());
    assert!((&a - &data.targets).amax() <= 1e-4);
}

#[test]
fn prediction_reproduces_experiment_mse() {
    let noise = NoiseSpec::new(InlierNoise::Gaussian { snr_db: 20.0 }, 0.05, 15.0, 0).unwrap();
    let lambda = 0.2;
    let cfg = ExperimentConfig::new(Protocol::Sinc1d, noise.clone(), KgardConfig::new(lambda, 10.0), 1, 42);
    let report = run_monte_carlo(&cfg).unwrap();

    let bench = make_sinc_dataset();
    let mut rng = seeded_rng(42);
    let noisy = corrupt_with(&bench.train.targets, &noise, &mut rng).unwrap();
    let n = bench.train.len();
    let params = KernelParams::new(Protocol::Sinc1d.kernel_sigma()).unwrap();
    let solver_cfg =
        KgardConfig::new(lambda, 10.0).with_weights(border_boost_weights(n, BORDER_BOOST_COUNT, BORDER_BOOST_FACTOR));
    let sol =
        kgard_fit(&Dataset::new(bench.train.inputs.clone(), noisy.observations.clone()).unwrap(), &params, &solver_cfg)
            .unwrap();
    let pred = predict(&sol, &bench.train.inputs, &bench.validation.inputs, &params).unwrap();
    let mse = (&pred - &bench.validation.targets).norm_squared() / pred.len() as f64;
    assert!((mse - report.trials[0].mse_validation).abs() <= 1e-12 * mse);

    // Scoring against the corrupted observations would give a different number.
    let train_pred = predict(&sol, &bench.train.inputs, &bench.train.inputs, &params).unwrap();
    let obs_mse = (&train_pred - &noisy.observations).norm_squared() / n as f64;
    let truth_mse = (&train_pred - &bench.train.targets).norm_squared() / n as f64;
    assert!((obs_mse - truth_mse).abs() > 1.0);
}

#[test]
fn single_precision_smoke() {
    let n = 30;
    let xs: Vec<f32> = (0..n).map(|i| i as f32 / (n - 1) as f32).collect();
    let pts = PointSet::from_scalars(&xs);
    let g = gram_matrix(&pts, &KernelParams::new(0.1f32).unwrap()).unwrap();
    let mut y = DVector::from_fn(n, |i, _| (4.0 * xs[i]).sin());
    y[7] += 10.0;
    y[21] -= 10.0;
    let solver: Kgard32 = Kgard::new(g, KgardConfig32::new(0.05, 1.0)).unwrap();
    let sol = solver.fit(&y).unwrap();
    assert_eq!(sol.support(), vec![7, 21]);
    assert!(sol.alpha.iter().all(|v| v.is_finite()));
}
