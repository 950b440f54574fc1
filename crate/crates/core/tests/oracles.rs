use backpar_core::estimator::build_h_hat;
use backpar_core::harness::{mise_study_with, ExperimentConfig, StudyOptions};
use backpar_core::observation::{observe, NoiseSpec, TimeMesh};
use backpar_core::spectral::SINE_NORM;
use backpar_core::MultiIndex;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::f64::consts::PI;

// Var(H_p) = (pi/n)^2 Lambda^2 sum_i psi_p(x_i)^2 = pi Lambda^2 / n for p < n.
#[test]
fn estimator_variance_matches_formula() {
    let (n, lambda, reps) = (16usize, 0.2, 2000u64);
    let grid = backpar_core::TensorGrid::new(&[n]).unwrap();
    let noise = NoiseSpec::constant(&grid, lambda, 0.0).unwrap();
    let mesh = TimeMesh::uniform(1.0, 1).unwrap();
    let h = |x: &[f64]| SINE_NORM * x[0].sin();
    let sigma2 = PI * lambda * lambda / n as f64;
    let chi = ChiSquared::new((reps - 1) as f64).unwrap();
    let (lo, hi) = (chi.inverse_cdf(0.0005), chi.inverse_cdf(0.9995));
    for p in [1u32, 3, 7, 15] {
        let mp = MultiIndex::single(p).unwrap();
        let draws: Vec<f64> = (0..reps)
            .map(|r| {
                let obs = observe(h, |_, _| 0.0, &grid, &mesh, &noise, r * 31 + 5).unwrap();
                build_h_hat(&obs, 225.0).unwrap().get(&mp)
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / reps as f64;
        let s2 = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let stat = (reps - 1) as f64 * s2 / sigma2;
        assert!(
            stat > lo && stat < hi,
            "p = {p}: s2 = {s2}, sigma2 = {sigma2}"
        );
        let expected_mean = if p == 1 { 1.0 } else { 0.0 };
        assert!((mean - expected_mean).abs() < 4.0 * (sigma2 / reps as f64).sqrt());
    }
}

fn estimator_only_config(lambda: f64) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "family": {{"kind": "constant", "symbol": "heat"}},
            "nonlinearity": "zero",
            "dim": 1, "grid_sizes": [16, 32], "horizon": 1.0, "time_steps": 20,
            "noise": {{"lambda": {lambda}}},
            "smoothness": {{"mu": [1.0], "mu0": 2.0, "delta": 0.5}},
            "tuning": {{"alpha0": 0.75}},
            "initial": {{"d": 1, "coefficients": [{{"p": [1], "c": 1.0}}]}},
            "replicates": 400, "seed": 9,
            "estimator_only": true
        }}"#
    ))
    .unwrap()
}

// The terminal state is a single mode, so the estimator is unbiased and its
// risk is (#modes in W_beta) * pi Lambda^2 / n.
#[test]
fn estimator_only_study_matches_variance_formula() {
    let lambda = 0.1;
    let report = mise_study_with(&estimator_only_config(lambda), &StudyOptions::default()).unwrap();
    for e in &report.entries {
        let modes = e.beta.sqrt().floor();
        let exact = modes * PI * lambda * lambda / e.n as f64;
        assert!(
            (e.mise - exact).abs() < 3.0 * e.stderr,
            "n = {}: {} vs {exact} (se {})",
            e.n,
            e.mise,
            e.stderr
        );
    }
}

#[test]
fn parallel_and_sequential_studies_agree_bitwise() {
    let mut cfg = estimator_only_config(0.1);
    cfg.replicates = 40;
    let seq = mise_study_with(
        &cfg,
        &StudyOptions {
            sequential: true,
            threads: None,
        },
    )
    .unwrap();
    let par = mise_study_with(
        &cfg,
        &StudyOptions {
            sequential: false,
            threads: Some(3),
        },
    )
    .unwrap();
    assert_eq!(seq.csv_string(), par.csv_string());
}

#[test]
fn zero_noise_heat_study_is_exact() {
    let mut cfg = estimator_only_config(0.0);
    cfg.estimator_only = false;
    cfg.replicates = 2;
    let report = mise_study_with(&cfg, &StudyOptions::default()).unwrap();
    assert_eq!(report.entries.len(), 6);
    for e in &report.entries {
        assert!(e.mise < 1e-12, "t = {}: {}", e.t, e.mise);
    }
}
