use backpar_core::estimator::{aliasing_kernel, discrete_coefficient};
use backpar_core::observation::{observe, NoiseSpec, TimeMesh};
use backpar_core::quasi_rev::{apply_p_rho, TruncatedNonlinearity};
use backpar_core::spectral::SINE_NORM;
use backpar_core::truncation::{evolve_truncated, solve_truncated, BackwardProblem, SolverOptions};
use backpar_core::{MultiIndex, OperatorSymbol, SourceTerm, SpectralField, TensorGrid};
use proptest::prelude::*;
use std::f64::consts::PI;

fn m(p: u32) -> MultiIndex {
    MultiIndex::single(p).unwrap()
}

fn field_1d(coeffs: &[f64]) -> SpectralField {
    SpectralField::from_pairs(
        1,
        coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| (m(i as u32 + 1), c)),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_matches_quadrature_2d(n0 in 2usize..7, n1 in 2usize..7, seed in any::<u64>()) {
        let grid = TensorGrid::new(&[n0, n1]).unwrap();
        let pick = |k: u64, lim: usize| (seed.rotate_left(k as u32 * 13) % lim as u64) as u32 + 1;
        let p = MultiIndex::new(vec![pick(1, n0 - 1), pick(2, n1 - 1)]).unwrap();
        let q = MultiIndex::new(vec![pick(3, 4 * n0), pick(4, 4 * n1)]).unwrap();
        let vals: Vec<f64> = grid
            .points()
            .map(|x| {
                SINE_NORM * SINE_NORM
                    * (f64::from(q.components()[0]) * x[0]).sin()
                    * (f64::from(q.components()[1]) * x[1]).sin()
            })
            .collect();
        let direct = discrete_coefficient(&vals, &p, &grid).unwrap();
        let kernel = PI * PI * aliasing_kernel(&p, &q, &[n0, n1]).unwrap();
        prop_assert!((direct - kernel).abs() < 1e-12);
    }

    #[test]
    fn p_rho_never_exceeds_cap(
        coeffs in prop::collection::vec(-1.0f64..1.0, 1..12),
        rho in 1.0f64..60.0,
    ) {
        let f = field_1d(&coeffs);
        prop_assume!(f.l2_norm() > 1e-6);
        let sym = OperatorSymbol::extended_fisher_kolmogorov();
        let g = apply_p_rho(&sym, rho, &f);
        prop_assert!(g.l2_norm() <= sym.eval_s(rho) * f.l2_norm() * (1.0 + 1e-12));
        prop_assert!(g.max_norm_sq() <= rho);
    }

    #[test]
    fn clamped_nonlinearity_is_lipschitz(q in 0.1f64..5.0, a in -20.0f64..20.0, b in -20.0f64..20.0) {
        for tn in [TruncatedNonlinearity::efk(q).unwrap(), TruncatedNonlinearity::huxley(q).unwrap()] {
            prop_assert!((tn.eval(a) - tn.eval(b)).abs() <= tn.lipschitz_bound() * (a - b).abs() + 1e-12);
            prop_assert_eq!(tn.eval(a), tn.raw(a.clamp(-q, q)));
        }
    }

    #[test]
    fn parseval_matches_fine_quadrature(coeffs in prop::collection::vec(-2.0f64..2.0, 1..10)) {
        let f = field_1d(&coeffs);
        let grid = TensorGrid::new(&[40]).unwrap();
        let vals = f.synthesize(&grid).unwrap();
        let quad = grid.weight() * vals.iter().map(|v| v * v).sum::<f64>();
        let coef = f.l2_norm().powi(2);
        prop_assert!((quad - coef).abs() <= 1e-10 * coef.max(1e-12));
    }

    #[test]
    fn truncated_solution_round_trips(
        coeffs in prop::collection::vec(-0.5f64..0.5, 1..4),
        horizon in 0.1f64..0.6,
    ) {
        let h = field_1d(&coeffs);
        let problem = BackwardProblem::new(
            OperatorSymbol::heat(),
            SourceTerm::sine(),
            h.clone(),
            None,
            TimeMesh::uniform(horizon, 30).unwrap(),
        )
        .unwrap();
        let opts = SolverOptions { tol: 1e-14, ..SolverOptions::default() };
        let sol = solve_truncated(&problem, 9.0, &opts).unwrap();
        let fwd = evolve_truncated(&problem, 9.0, &sol.fields[0], &opts).unwrap();
        prop_assert!(fwd.last().unwrap().distance_sq(&h.project(9.0)).sqrt() < 1e-10);
    }

    #[test]
    fn field_json_round_trip(coeffs in prop::collection::vec(-1e3f64..1e3, 0..10)) {
        let f = field_1d(&coeffs);
        let back: SpectralField = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn observations_depend_only_on_seed(seed in any::<u64>()) {
        let grid = TensorGrid::new(&[6, 3]).unwrap();
        let noise = NoiseSpec::constant(&grid, 0.3, 0.2).unwrap();
        let mesh = TimeMesh::uniform(1.0, 5).unwrap();
        let a = observe(|x| x[0], |x, t| x[1] * t, &grid, &mesh, &noise, seed).unwrap();
        let b = observe(|x| x[0], |x, t| x[1] * t, &grid, &mesh, &noise, seed).unwrap();
        let c = observe(|x| x[0], |x, t| x[1] * t, &grid, &mesh, &noise, seed ^ 1).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(a.d_tilde, c.d_tilde);
    }
}
