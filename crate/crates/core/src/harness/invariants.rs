//! Built-in invariant suite behind `backpar check`.

use super::config::{DiffusionSpec, FamilySpec, NonlinearityKind, SymbolName, TimeProfile};
use super::forward::refinement_order;
use super::Family;
use crate::error::Result;
use crate::estimator::{aliasing_kernel, discrete_coefficient};
use crate::observation::{observe, NoiseSpec, TimeMesh};
use crate::quasi_rev::{
    apply_p_rho, solve_qr_linear_in_state, OperatorPair, QrConfig, TruncatedNonlinearity,
};
use crate::spectral::{
    eigenfunction_eval, IndexSet, MultiIndex, OperatorSymbol, SpectralField, TensorGrid,
};
use crate::truncation::{
    evolve_truncated, solve_truncated, BackwardProblem, SolverOptions, SourceTerm,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<(bool, String)>;

const CHECKS: &[(&str, Check)] = &[
    ("aliasing-kernel", aliasing),
    ("p-rho-cap", p_rho_cap),
    ("f-q-lipschitz", f_q_lipschitz),
    ("parseval-error-path", parseval),
    ("linear-closed-form", linear_closed_form),
    ("terminal-consistency", terminal_consistency),
    ("qr-diagonal-exactness", qr_diagonal),
    ("backward-forward-roundtrip", roundtrip),
    ("oracle-refinement-order", oracle_order),
    ("observation-determinism", determinism),
];

/// Runs every check; errors count as failures.
pub fn run_checks() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|&(name, check)| match check() {
            Ok((passed, detail)) => CheckResult {
                name,
                passed,
                detail,
            },
            Err(e) => CheckResult {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}

fn m(p: u32) -> MultiIndex {
    MultiIndex::single(p).expect("positive")
}

fn aliasing() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for n in [4usize, 8] {
        let grid = TensorGrid::new(&[n])?;
        for q in 1..=4 * n as u32 {
            let vals: Vec<f64> = grid
                .points()
                .map(|x| eigenfunction_eval(&m(q), &x))
                .collect::<Result<_>>()?;
            for p in 1..n as u32 {
                let direct = discrete_coefficient(&vals, &m(p), &grid)?;
                let closed = PI * aliasing_kernel(&m(p), &m(q), &[n])?;
                worst = worst.max((direct - closed).abs());
            }
        }
    }
    Ok((worst < 1e-12, format!("max deviation {worst:.2e}")))
}

fn p_rho_cap() -> Result<(bool, String)> {
    let sym = OperatorSymbol::extended_fisher_kolmogorov();
    let set = IndexSet::new(2, 40.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cap = sym.eval_s(9.0);
    let mut violations = 0;
    for _ in 0..1000 {
        let vals: Vec<f64> = (0..set.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let f = SpectralField::from_members(2, set.members(), &vals)?;
        let f = f.scaled(1.0 / f.l2_norm());
        if apply_p_rho(&sym, 9.0, &f).l2_norm() > cap {
            violations += 1;
        }
    }
    Ok((
        violations == 0,
        format!("{violations} violations of cap {cap}"),
    ))
}

fn f_q_lipschitz() -> Result<(bool, String)> {
    let tn = TruncatedNonlinearity::efk(2.0)?;
    let v = tn.check_lipschitz(10.0, 10_000, 2);
    Ok((
        v == 0,
        format!("{v} violations of 2K(2) = {}", tn.lipschitz_bound()),
    ))
}

fn parseval() -> Result<(bool, String)> {
    let a = SpectralField::from_pairs(
        2,
        vec![
            (MultiIndex::new(vec![1, 1])?, 0.8),
            (MultiIndex::new(vec![2, 3])?, -0.3),
        ],
    )?;
    let b = SpectralField::from_pairs(
        2,
        vec![
            (MultiIndex::new(vec![1, 1])?, 0.7),
            (MultiIndex::new(vec![3, 1])?, 0.1),
        ],
    )?;
    let grid = TensorGrid::new(&[48, 48])?;
    let (va, vb) = (a.synthesize(&grid)?, b.synthesize(&grid)?);
    let quad: f64 = grid.weight()
        * va.iter()
            .zip(&vb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    let coef = a.distance_sq(&b);
    let rel = (quad - coef).abs() / coef;
    Ok((rel < 1e-8, format!("relative difference {rel:.2e}")))
}

fn heat_problem(h: SpectralField, steps: usize, horizon: f64) -> Result<BackwardProblem> {
    BackwardProblem::new(
        OperatorSymbol::heat(),
        SourceTerm::zero(),
        h,
        None,
        TimeMesh::uniform(horizon, steps)?,
    )
}

fn linear_closed_form() -> Result<(bool, String)> {
    let h = SpectralField::from_pairs(1, vec![(m(1), 1.0), (m(2), 0.1)])?;
    let sol = solve_truncated(&heat_problem(h, 200, 1.0)?, 4.0, &SolverOptions::default())?;
    let mut worst: f64 = 0.0;
    for (t, f) in sol.times.iter().zip(&sol.fields) {
        worst = worst.max((f.get(&m(1)) - (1.0 - t).exp()).abs());
        worst = worst.max((f.get(&m(2)) - 0.1 * (4.0 * (1.0 - t)).exp()).abs());
    }
    Ok((worst < 1e-10, format!("max deviation {worst:.2e}")))
}

fn terminal_consistency() -> Result<(bool, String)> {
    let h = SpectralField::from_pairs(1, (1..=8).map(|p| (m(p), 1.0 / f64::from(p))))?;
    let mut problem = heat_problem(h.clone(), 50, 0.4)?;
    problem.source = SourceTerm::sine();
    let sol = solve_truncated(&problem, 10.0, &SolverOptions::default())?;
    let support_ok = sol.fields.iter().all(|f| f.max_norm_sq() <= 10.0);
    let terminal_ok = *sol.terminal() == h.project(10.0);
    Ok((
        support_ok && terminal_ok,
        format!("support {support_ok}, terminal {terminal_ok}"),
    ))
}

fn qr_diagonal() -> Result<(bool, String)> {
    let pair = OperatorPair::efk(|_| 1.0, |_| 1.0, 1.0)?;
    let h = SpectralField::from_pairs(1, vec![(m(1), 1.0), (m(2), 0.5)])?;
    let sol = solve_qr_linear_in_state(
        &pair,
        &TruncatedNonlinearity::zero(),
        &QrConfig {
            ball_radius: Some(f64::INFINITY),
            ..QrConfig::new(4.0, 200)
        },
        &h,
        None,
        0.5,
    )?;
    let mut worst: f64 = 0.0;
    for (t, f) in sol.trajectory.times.iter().zip(&sol.trajectory.fields) {
        for p in [1, 2] {
            let exact = ((0.5 - t) * pair.p_symbol().eval(&m(p))).exp() * h.get(&m(p));
            worst = worst.max((f.get(&m(p)) - exact).abs() / exact);
        }
    }
    Ok((worst < 1e-8, format!("max relative deviation {worst:.2e}")))
}

fn roundtrip() -> Result<(bool, String)> {
    let h = SpectralField::from_pairs(1, vec![(m(1), 0.6), (m(2), -0.1)])?;
    let mut problem = heat_problem(h, 100, 0.5)?;
    problem.symbol = OperatorSymbol::extended_fisher_kolmogorov();
    problem.source = SourceTerm::sine();
    let opts = SolverOptions {
        tol: 1e-13,
        ..SolverOptions::default()
    };
    let sol = solve_truncated(&problem, 4.0, &opts)?;
    let fwd = evolve_truncated(&problem, 4.0, &sol.fields[0], &opts)?;
    let err = fwd.last().unwrap().distance_sq(sol.terminal()).sqrt();
    Ok((err < 1e-9, format!("terminal mismatch {err:.2e}")))
}

fn oracle_order() -> Result<(bool, String)> {
    let u0 = SpectralField::from_pairs(1, vec![(m(1), 1.0), (m(2), 0.3)])?;
    let families = [
        (
            FamilySpec::Constant {
                symbol: SymbolName::Heat,
                scale: 1.0,
            },
            NonlinearityKind::Sine,
        ),
        (
            FamilySpec::Constant {
                symbol: SymbolName::Efk,
                scale: 1.0,
            },
            NonlinearityKind::Efk,
        ),
        (
            FamilySpec::TimeDependent {
                gamma0: TimeProfile::Sine {
                    mean: 1.0,
                    amplitude: 0.1,
                    frequency: 1.0,
                },
                gamma1: TimeProfile::Constant { value: 1.0 },
                m1: None,
            },
            NonlinearityKind::Efk,
        ),
        (
            FamilySpec::NonlinearDiffusion {
                diffusion: DiffusionSpec::Rational {
                    base: 1.0,
                    amplitude: 0.1,
                },
            },
            NonlinearityKind::Huxley,
        ),
    ];
    let mut worst = f64::INFINITY;
    for (spec, nl) in families {
        let fam = Family::new(spec, nl, None, 0.5)?;
        worst = worst.min(refinement_order(&u0, &fam, 0.5, 8, 64.0)?);
    }
    Ok((worst >= 1.9, format!("smallest empirical order {worst:.2}")))
}

fn determinism() -> Result<(bool, String)> {
    let grid = TensorGrid::new(&[16, 8])?;
    let noise = NoiseSpec::constant(&grid, 0.1, 0.1)?;
    let mesh = TimeMesh::uniform(1.0, 10)?;
    let h = |x: &[f64]| x[0].sin() * x[1].sin();
    let g = |x: &[f64], t: f64| t * x[0];
    let a = observe(h, g, &grid, &mesh, &noise, 42)?;
    let b = observe(h, g, &grid, &mesh, &noise, 42)?;
    Ok((a == b, "identical observation sets".into()))
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_checks() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
