//! Fourier-truncation regularization for constant-coefficient operators.
//!
//! Keeps only modes in `W_rho` and solves the backward mild equation
//! `U(t) = e^{(T-t)M} H - int_t^T e^{(tau-t)M} (G + F(U))(tau) dtau`
//! by Picard iteration with composite-trapezoid quadrature on the mesh.

use crate::error::{invalid, Error, Result};
use crate::estimator::FieldSeries;
use crate::observation::TimeMesh;
use crate::spectral::{
    dealias_points, IndexSet, ModalPlan, MultiIndex, OperatorSymbol, SpectralField, TensorGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::sync::Arc;

/// Largest exponent accepted before `exp` is considered an overflow.
pub fn exponent_limit() -> f64 {
    f64::MAX.ln() - 10.0
}

/// `e^{dt M(|p|)}`.
pub fn propagate_mode(symbol: &OperatorSymbol, p: &MultiIndex, dt: f64) -> Result<f64> {
    if !(dt >= 0.0) {
        return Err(invalid(format!("dt must be >= 0, got {dt}")));
    }
    propagate(symbol.eval(p), dt)
}

pub(crate) fn propagate(m: f64, dt: f64) -> Result<f64> {
    let e = dt * m;
    if e > exponent_limit() {
        return Err(Error::Overflow { exponent: e });
    }
    Ok(e.exp())
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A pointwise source `F: R -> R` with a declared global Lipschitz constant.
#[derive(Clone)]
pub struct SourceTerm {
    f: ScalarFn,
    lipschitz: f64,
    label: String,
    zero: bool,
}

impl fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SourceTerm({}, K = {})", self.label, self.lipschitz)
    }
}

impl SourceTerm {
    pub fn zero() -> Self {
        Self {
            f: Arc::new(|_| 0.0),
            lipschitz: 0.0,
            label: "zero".into(),
            zero: true,
        }
    }

    /// `F(u) = sin(u)`, `K = 1`.
    pub fn sine() -> Self {
        Self {
            f: Arc::new(f64::sin),
            lipschitz: 1.0,
            label: "sin".into(),
            zero: false,
        }
    }

    /// Wraps `f` after spot-checking the declared constant on random pairs in
    /// `[-range, range]`.
    pub fn from_fn<F>(f: F, lipschitz: f64, label: &str, range: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
            return Err(invalid("Lipschitz constant must be finite and >= 0"));
        }
        let violations = lipschitz_violations(&f, lipschitz, range, 1000, 0x5eed);
        if violations > 0 {
            return Err(invalid(format!(
                "{label}: declared Lipschitz constant {lipschitz} violated on {violations} pairs"
            )));
        }
        Ok(Self {
            f: Arc::new(f),
            lipschitz,
            label: label.into(),
            zero: false,
        })
    }

    pub fn eval(&self, w: f64) -> f64 {
        (self.f)(w)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub(crate) fn function(&self) -> &(dyn Fn(f64) -> f64 + Send + Sync) {
        &*self.f
    }
}

/// Counts pairs `(a, b)` drawn uniformly from `[-range, range]` with
/// `|f(a) - f(b)| > k |a - b|` (up to rounding).
pub fn lipschitz_violations(
    f: &dyn Fn(f64) -> f64,
    k: f64,
    range: f64,
    pairs: usize,
    seed: u64,
) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .filter(|_| {
            let a = rng.random_range(-range..=range);
            let b = rng.random_range(-range..=range);
            let lhs = (f(a) - f(b)).abs();
            lhs > k * (a - b).abs() + 1e-12 * (1.0 + lhs)
        })
        .count()
}

/// Pseudo-spectral coefficients of `f(U)` on the plan's modes.
pub(crate) fn nonlinear_coefficients(
    plan: &ModalPlan,
    coeffs: &[f64],
    f: &(dyn Fn(f64) -> f64 + Send + Sync),
) -> Vec<f64> {
    let mut vals = plan.synthesize(coeffs);
    for v in &mut vals {
        *v = f(*v);
    }
    plan.analyze(&vals)
}

pub(crate) fn dealias_plan(
    dim: usize,
    cutoff: f64,
    min_points: usize,
    members: &[MultiIndex],
) -> Result<ModalPlan> {
    let grid = TensorGrid::cube(dim, dealias_points(cutoff, min_points))?;
    ModalPlan::new(grid, members)
}

/// Data of one constant-coefficient backward problem.
#[derive(Clone, Debug)]
pub struct BackwardProblem {
    pub symbol: OperatorSymbol,
    pub source: SourceTerm,
    pub h_hat: SpectralField,
    /// Estimated source path; `None` means `G = 0`.
    pub g_hat: Option<FieldSeries>,
    pub mesh: TimeMesh,
    /// Cutoff used to build the data estimates, if known.
    pub data_cutoff: Option<f64>,
}

impl BackwardProblem {
    pub fn new(
        symbol: OperatorSymbol,
        source: SourceTerm,
        h_hat: SpectralField,
        g_hat: Option<FieldSeries>,
        mesh: TimeMesh,
    ) -> Result<Self> {
        if let Some(g) = &g_hat {
            if g.dim() != h_hat.dim() {
                return Err(invalid("source and terminal data dimensions differ"));
            }
            let (t0, t1) = (g.times[0], *g.times.last().unwrap());
            if t0 > 1e-12 || t1 < mesh.horizon() - 1e-12 {
                return Err(invalid(format!(
                    "source samples cover [{t0}, {t1}], mesh needs [0, {}]",
                    mesh.horizon()
                )));
            }
        }
        Ok(Self {
            symbol,
            source,
            h_hat,
            g_hat,
            mesh,
            data_cutoff: None,
        })
    }

    pub fn with_data_cutoff(mut self, beta: f64) -> Self {
        self.data_cutoff = Some(beta);
        self
    }

    pub fn horizon(&self) -> f64 {
        self.mesh.horizon()
    }

    pub fn dim(&self) -> usize {
        self.h_hat.dim()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    /// Lower bound on the per-axis size of the pseudo-spectral grid.
    pub dealias_min: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_sweeps: 200,
            dealias_min: 32,
        }
    }
}

/// Coefficients of the regularized solution at every mesh time.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySolution {
    pub times: Vec<f64>,
    pub fields: Vec<SpectralField>,
    pub rho: f64,
    /// Picard residual histories, one per sub-horizon (latest in time first).
    pub picard_residuals: Vec<Vec<f64>>,
    pub converged: bool,
    /// `W_rho` contains modes beyond the data cutoff.
    pub extra_modes_without_data: bool,
}

#[derive(Serialize)]
struct Sample<'a> {
    t: f64,
    field: &'a SpectralField,
}

impl TrajectorySolution {
    pub fn at(&self, t: f64, tol: f64) -> Option<&SpectralField> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= tol)
            .map(|j| &self.fields[j])
    }

    pub fn terminal(&self) -> &SpectralField {
        self.fields.last().expect("non-empty trajectory")
    }

    /// JSON array of `{"t", "field"}` samples.
    pub fn to_json_value(&self) -> serde_json::Value {
        let samples: Vec<Sample<'_>> = self
            .times
            .iter()
            .zip(&self.fields)
            .map(|(&t, field)| Sample { t, field })
            .collect();
        serde_json::to_value(samples).expect("trajectory serializes")
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.to_json_value())?;
        Ok(())
    }

    /// `t,l2_norm,<mode>...` summary rows.
    pub fn write_csv<W: Write>(&self, mut w: W, modes: &[MultiIndex]) -> Result<()> {
        write!(w, "t,l2_norm")?;
        for p in modes {
            let label: Vec<String> = p.components().iter().map(u32::to_string).collect();
            write!(w, ",u_{}", label.join("_"))?;
        }
        writeln!(w)?;
        for (t, f) in self.times.iter().zip(&self.fields) {
            write!(w, "{t},{}", f.l2_norm())?;
            for p in modes {
                write!(w, ",{}", f.get(p))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// The `t = 0` field of a converged solution.
pub fn initial_state(sol: &TrajectorySolution) -> Result<SpectralField> {
    if !sol.converged {
        return Err(Error::State("solution did not converge".into()));
    }
    sol.fields
        .first()
        .cloned()
        .ok_or_else(|| Error::State("empty trajectory".into()))
}

/// Per-step factors `e^{Delta_j M_p}` for every mesh interval.
fn step_factors(symbols: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let horizon = times[times.len() - 1] - times[0];
    if let Some(&m) = symbols.iter().max_by(|a, b| a.total_cmp(b)) {
        if horizon * m > exponent_limit() {
            return Err(Error::Overflow {
                exponent: horizon * m,
            });
        }
    }
    times
        .windows(2)
        .map(|w| symbols.iter().map(|&m| propagate(m, w[1] - w[0])).collect())
        .collect()
}

/// One backward trapezoid sweep on the index range `lo..=hi` given the
/// terminal coefficients at `hi` and the forcing samples `s` (`G + F(U)`).
fn backward_sweep(
    out: &mut [Vec<f64>],
    lo: usize,
    hi: usize,
    times: &[f64],
    factors: &[Vec<f64>],
    s: &[Vec<f64>],
) {
    for j in (lo..hi).rev() {
        let dt = times[j + 1] - times[j];
        let (head, tail) = out.split_at_mut(j + 1);
        let next = &tail[0];
        let cur = &mut head[j];
        for (i, c) in cur.iter_mut().enumerate() {
            let e = factors[j][i];
            *c = e * next[i] - 0.5 * dt * (s[j][i] + e * s[j + 1][i]);
        }
    }
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn l2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Segment boundaries (mesh indices) so that each sub-horizon has
/// `2 K length < 1`.
fn segments(times: &[f64], lipschitz: f64) -> Vec<usize> {
    let last = times.len() - 1;
    let horizon = times[last] - times[0];
    let ratio = 2.0 * lipschitz * horizon;
    if ratio < 1.0 {
        return vec![0, last];
    }
    let m = ratio.floor() as usize + 1;
    let mut cuts = vec![0];
    for k in 1..m {
        let target = times[0] + horizon * k as f64 / m as f64;
        let j = times.partition_point(|&t| t < target).min(last);
        if j > *cuts.last().unwrap() && j < last {
            cuts.push(j);
        }
    }
    cuts.push(last);
    cuts
}

/// Solves the truncated backward integral equation on `W_rho`.
pub fn solve_truncated(
    problem: &BackwardProblem,
    rho: f64,
    opts: &SolverOptions,
) -> Result<TrajectorySolution> {
    if !(opts.tol > 0.0) || opts.max_sweeps == 0 {
        return Err(invalid("tol must be positive and max_sweeps >= 1"));
    }
    let d = problem.dim();
    let set = IndexSet::new(d, rho)?;
    let members = set.members();
    let times = problem.mesh.points();
    let last = times.len() - 1;
    let symbols: Vec<f64> = members.iter().map(|p| problem.symbol.eval(p)).collect();
    let factors = step_factors(&symbols, times)?;

    let g: Vec<Vec<f64>> = match &problem.g_hat {
        Some(series) => times
            .iter()
            .map(|&t| series.values_at(t, members))
            .collect(),
        None => vec![vec![0.0; members.len()]; times.len()],
    };

    let mut u = vec![vec![0.0; members.len()]; times.len()];
    u[last] = problem.h_hat.values_on(members);
    let mut residuals = Vec::new();

    if problem.source.is_zero() {
        backward_sweep(&mut u, 0, last, times, &factors, &g);
    } else {
        let plan = dealias_plan(d, rho, opts.dealias_min, members)?;
        let f = problem.source.function();
        let cuts = segments(times, problem.source.lipschitz());
        for w in cuts.windows(2).rev() {
            let (lo, hi) = (w[0], w[1]);
            // Initial iterate: linear solution on the segment.
            backward_sweep(&mut u, lo, hi, times, &factors, &g);
            let mut history = Vec::new();
            let mut done = false;
            for _ in 0..opts.max_sweeps {
                let forcing: Vec<Vec<f64>> = (0..times.len())
                    .into_par_iter()
                    .map(|j| {
                        if j < lo || j > hi {
                            return Vec::new();
                        }
                        let fu = nonlinear_coefficients(&plan, &u[j], f);
                        fu.iter().zip(&g[j]).map(|(a, b)| a + b).collect()
                    })
                    .collect();
                let prev: Vec<Vec<f64>> = u[lo..hi].to_vec();
                backward_sweep(&mut u, lo, hi, times, &factors, &forcing);
                let mut res: f64 = 0.0;
                let mut scale: f64 = 1.0;
                for (a, b) in u[lo..hi].iter().zip(&prev) {
                    res = res.max(l2_diff(a, b));
                    scale = scale.max(l2(a));
                }
                if !res.is_finite() {
                    return Err(Error::Numerical("Picard iterate is not finite".into()));
                }
                history.push(res);
                if res < opts.tol * scale {
                    done = true;
                    break;
                }
            }
            if !done {
                return Err(Error::NonConvergence {
                    sweeps: history.len(),
                    last: *history.last().unwrap_or(&f64::NAN),
                    residuals: history,
                });
            }
            residuals.push(history);
        }
    }

    let fields = u
        .iter()
        .map(|c| SpectralField::from_members(d, members, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectorySolution {
        times: times.to_vec(),
        fields,
        rho,
        picard_residuals: residuals,
        converged: true,
        extra_modes_without_data: problem.data_cutoff.is_some_and(|b| rho > b),
    })
}

/// Evolves `u0` forward on the problem mesh with the trapezoid scheme that
/// exactly inverts the backward recurrence of [`solve_truncated`]; the
/// implicit source term is resolved by fixed-point iteration per step.
pub fn evolve_truncated(
    problem: &BackwardProblem,
    rho: f64,
    u0: &SpectralField,
    opts: &SolverOptions,
) -> Result<Vec<SpectralField>> {
    let d = problem.dim();
    let set = IndexSet::new(d, rho)?;
    let members = set.members();
    let times = problem.mesh.points();
    let symbols: Vec<f64> = members.iter().map(|p| problem.symbol.eval(p)).collect();
    let g: Vec<Vec<f64>> = match &problem.g_hat {
        Some(series) => times
            .iter()
            .map(|&t| series.values_at(t, members))
            .collect(),
        None => vec![vec![0.0; members.len()]; times.len()],
    };
    let plan = if problem.source.is_zero() {
        None
    } else {
        Some(dealias_plan(d, rho, opts.dealias_min, members)?)
    };
    let forcing = |c: &[f64], j: usize| -> Vec<f64> {
        match &plan {
            None => g[j].clone(),
            Some(plan) => nonlinear_coefficients(plan, c, problem.source.function())
                .iter()
                .zip(&g[j])
                .map(|(a, b)| a + b)
                .collect(),
        }
    };
    let mut u = vec![u0.values_on(members)];
    for j in 0..times.len() - 1 {
        let dt = times[j + 1] - times[j];
        let decay: Vec<f64> = symbols.iter().map(|&m| (-dt * m).exp()).collect();
        let s0 = forcing(&u[j], j);
        let base: Vec<f64> = (0..members.len())
            .map(|i| decay[i] * (u[j][i] + 0.5 * dt * s0[i]))
            .collect();
        let mut next: Vec<f64> = base
            .iter()
            .zip(&g[j + 1])
            .map(|(b, gi)| b + 0.5 * dt * gi)
            .collect();
        if plan.is_some() {
            let mut converged = false;
            for _ in 0..opts.max_sweeps {
                let s1 = forcing(&next, j + 1);
                let cand: Vec<f64> = base
                    .iter()
                    .zip(&s1)
                    .map(|(b, s)| b + 0.5 * dt * s)
                    .collect();
                let res = l2_diff(&cand, &next);
                next = cand;
                if res < opts.tol * l2(&next).max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NonConvergence {
                    sweeps: opts.max_sweeps,
                    last: f64::NAN,
                    residuals: Vec::new(),
                });
            }
        }
        u.push(next);
    }
    u.iter()
        .map(|c| SpectralField::from_members(d, members, c))
        .collect()
}
