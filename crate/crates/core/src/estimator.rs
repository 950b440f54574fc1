//! Spectral-cutoff regression estimators of the final state `H` and the
//! source `G`, and the a-priori choice of regularization parameters.

use crate::error::{invalid, Error, Result};
use crate::observation::ObservationSet;
use crate::spectral::{
    eigenfunction_eval, pi_pow, IndexSet, ModalPlan, MultiIndex, OperatorSymbol, SpectralField,
    TensorGrid,
};
use serde::{Deserialize, Serialize};

/// `(pi^d / prod n_k) * sum_i values_i * psi_p(x_i)` by direct summation.
pub fn discrete_coefficient(values: &[f64], p: &MultiIndex, grid: &TensorGrid) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(invalid(format!(
            "{} values for a grid of {} points",
            values.len(),
            grid.len()
        )));
    }
    if p.dim() != grid.dim() {
        return Err(invalid("mode and grid dimensions differ"));
    }
    let mut x = vec![0.0; grid.dim()];
    let mut total = 0.0;
    for (i, v) in values.iter().enumerate() {
        grid.point_into(i, &mut x);
        total += v * eigenfunction_eval(p, &x)?;
    }
    Ok(grid.weight() * total)
}

/// Discrete coefficients for every member of `set`, computed by separable
/// per-axis transforms.
pub fn discrete_coefficients(
    values: &[f64],
    grid: &TensorGrid,
    set: &IndexSet,
) -> Result<SpectralField> {
    if values.len() != grid.len() {
        return Err(invalid("values must match the grid"));
    }
    if set.dim() != grid.dim() {
        return Err(invalid("index set and grid dimensions differ"));
    }
    let plan = ModalPlan::new(grid.clone(), set.members())?;
    SpectralField::from_members(grid.dim(), set.members(), &plan.analyze(values))
}

/// Closed form of `(1 / prod n_k) sum_i psi_p(x_i) psi_q(x_i)` for
/// `p_k <= n_k - 1`.
///
/// Per axis the factor is non-zero only when `q_k = 2 l n_k + p_k` (sign
/// `(-1)^l`) or `q_k = 2 l n_k - p_k` (sign `(-1)^(l+1)`); the product of
/// these signs multiplies `1 / pi^d`.
pub fn aliasing_kernel(p: &MultiIndex, q: &MultiIndex, sizes: &[usize]) -> Result<f64> {
    let d = sizes.len();
    if p.dim() != d || q.dim() != d {
        return Err(invalid("index dimensions do not match the grid"));
    }
    let mut sign = 1.0;
    for k in 0..d {
        let n = sizes[k] as i64;
        let pk = i64::from(p.components()[k]);
        let qk = i64::from(q.components()[k]);
        if pk > n - 1 {
            return Err(invalid(format!(
                "p_{k} = {pk} exceeds n_{k} - 1 = {}",
                n - 1
            )));
        }
        let period = 2 * n;
        if (qk - pk).rem_euclid(period) == 0 {
            let l = (qk - pk) / period;
            if l % 2 != 0 {
                sign = -sign;
            }
        } else if (qk + pk).rem_euclid(period) == 0 {
            let l = (qk + pk) / period;
            if l % 2 == 0 {
                sign = -sign;
            }
        } else {
            return Ok(0.0);
        }
    }
    Ok(sign / pi_pow(d))
}

/// A field sampled at increasing times, linearly interpolated in between.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSeries {
    pub times: Vec<f64>,
    pub fields: Vec<SpectralField>,
}

impl FieldSeries {
    pub fn new(times: Vec<f64>, fields: Vec<SpectralField>) -> Result<Self> {
        if times.len() != fields.len() || times.is_empty() {
            return Err(invalid("field series needs one field per time"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("field series times must increase"));
        }
        Ok(Self { times, fields })
    }

    pub fn dim(&self) -> usize {
        self.fields[0].dim()
    }

    /// Coefficients on `members` at time `t` (clamped to the sampled range).
    pub fn values_at(&self, t: f64, members: &[MultiIndex]) -> Vec<f64> {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.fields[0].values_on(members);
        }
        if t >= self.times[n - 1] {
            return self.fields[n - 1].values_on(members);
        }
        let j = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        let w = (t - t0) / (t1 - t0);
        let a = self.fields[j].values_on(members);
        let b = self.fields[j + 1].values_on(members);
        if w == 0.0 {
            return a;
        }
        a.iter()
            .zip(&b)
            .map(|(x, y)| (1.0 - w) * x + w * y)
            .collect()
    }
}

/// `H_beta = sum_{p in W_beta} [discrete coefficient of D] psi_p`.
pub fn build_h_hat(obs: &ObservationSet, beta: f64) -> Result<SpectralField> {
    let set = IndexSet::new(obs.grid.dim(), beta)?;
    discrete_coefficients(&obs.d_tilde, &obs.grid, &set)
}

/// Applies the same estimator to the source path at every mesh time.
pub fn build_g_hat(obs: &ObservationSet, beta: f64) -> Result<FieldSeries> {
    let set = IndexSet::new(obs.grid.dim(), beta)?;
    let plan = ModalPlan::new(obs.grid.clone(), set.members())?;
    let fields = obs
        .g_tilde
        .iter()
        .map(|row| SpectralField::from_members(obs.grid.dim(), set.members(), &plan.analyze(row)))
        .collect::<Result<Vec<_>>>()?;
    FieldSeries::new(obs.time_mesh.points().to_vec(), fields)
}

/// Smoothness assumptions on the sought solution and data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothnessProfile {
    /// Per-axis exponents, each `> 1/2`.
    pub mu: Vec<f64>,
    /// `>= d * max(mu_k)`.
    pub mu0: f64,
    /// Exponential-smoothness margin of the solution (`>= 0`).
    #[serde(default)]
    pub delta: f64,
    /// Gevrey-weight exponent (`>= 0`).
    #[serde(default)]
    pub gamma: f64,
    /// Power-smoothness exponent (`> 0`).
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl SmoothnessProfile {
    pub fn new(mu: Vec<f64>, mu0: f64, delta: f64) -> Result<Self> {
        let p = Self {
            mu,
            mu0,
            delta,
            gamma: 0.0,
            alpha: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.is_empty() || self.mu.iter().any(|&m| !(m > 0.5)) {
            return Err(invalid(format!(
                "every mu_k must exceed 1/2, got {:?}",
                self.mu
            )));
        }
        let max_mu = self.mu.iter().copied().fold(f64::MIN, f64::max);
        if !(self.mu0 >= self.mu.len() as f64 * max_mu) {
            return Err(invalid(format!(
                "mu0 = {} must be >= d * max(mu) = {}",
                self.mu0,
                self.mu.len() as f64 * max_mu
            )));
        }
        if !(self.delta >= 0.0) || !(self.gamma >= 0.0) || !(self.alpha > 0.0) {
            return Err(invalid("delta, gamma must be >= 0 and alpha > 0"));
        }
        Ok(())
    }
}

/// Cutoffs and truncation level for one grid size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationParams {
    pub beta_n: f64,
    pub rho_n: f64,
    /// `+inf` when no truncation of the nonlinearity is needed.
    pub q_n: f64,
    pub alpha0: f64,
    pub delta0: f64,
    /// `Pi(n)`; `None` when it was not needed.
    pub pi_bar: Option<f64>,
    /// The level equation gave a value below `q_min` and was clamped.
    pub q_clamped: bool,
}

/// `beta_n = (prod n_k)^(1 / (2 alpha0 + d/2))`.
pub fn beta_rule(sizes: &[usize], alpha0: f64) -> f64 {
    let n: f64 = sizes.iter().map(|&s| s as f64).product();
    n.powf(1.0 / (2.0 * alpha0 + sizes.len() as f64 / 2.0))
}

/// Right-hand side `alpha0 / (T (2 alpha0 + d/2)) * log(prod n_k)` of the
/// cutoff equation `M(sqrt(rho)) = ...`.
pub fn rho_target(sizes: &[usize], horizon: f64, alpha0: f64) -> f64 {
    let n: f64 = sizes.iter().map(|&s| s as f64).product();
    alpha0 / (horizon * (2.0 * alpha0 + sizes.len() as f64 / 2.0)) * n.ln()
}

/// `Pi(n) = max(prod n_k^(1 - 4 mu_k), N^((2 alpha0 - mu0)/(2 alpha0 + d/2)),
/// N^(-4 alpha0 delta / (4 T alpha0 + d T)))` with `N = prod n_k`.
pub fn pi_bar(sizes: &[usize], horizon: f64, smooth: &SmoothnessProfile, alpha0: f64) -> f64 {
    let d = sizes.len() as f64;
    let n: f64 = sizes.iter().map(|&s| s as f64).product();
    let first: f64 = sizes
        .iter()
        .zip(smooth.mu.iter().cycle())
        .map(|(&nk, &mu)| (nk as f64).powf(1.0 - 4.0 * mu))
        .product();
    let second = n.powf((2.0 * alpha0 - smooth.mu0) / (2.0 * alpha0 + d / 2.0));
    let third = n.powf(-4.0 * alpha0 * smooth.delta / (4.0 * horizon * alpha0 + d * horizon));
    first.max(second).max(third)
}

/// Solves `K(Q) = (delta0 - 1)/(4T) log(Pi)` through the inverse of the
/// Lipschitz-constant map and clamps the result at `q_min`.
pub fn q_level(
    pi: f64,
    horizon: f64,
    delta0: f64,
    lipschitz_inverse: &dyn Fn(f64) -> Option<f64>,
    q_min: f64,
) -> Result<(f64, bool)> {
    if !(pi < 1.0) {
        return Err(Error::GridTooSmall { pi_bar: pi });
    }
    let k = (delta0 - 1.0) / (4.0 * horizon) * pi.ln();
    match lipschitz_inverse(k) {
        Some(q) if q.is_finite() && q >= q_min => Ok((q, false)),
        other => {
            log::warn!(
                "truncation level from K = {k:.4} is {other:?}; clamping to Q_min = {q_min}"
            );
            Ok((q_min, true))
        }
    }
}

/// A-priori parameter choice for grid `sizes`.
///
/// `lipschitz_inverse` maps a Lipschitz level `K` to the truncation level
/// `Q` with `K(Q) = K`; pass `None` for globally Lipschitz sources, in which
/// case `q_n = +inf` and `Pi(n)` is not required to be below 1.
#[allow(clippy::too_many_arguments)]
pub fn select_parameters(
    sizes: &[usize],
    horizon: f64,
    smooth: &SmoothnessProfile,
    alpha0: f64,
    delta0: f64,
    symbol: &OperatorSymbol,
    lipschitz_inverse: Option<&dyn Fn(f64) -> Option<f64>>,
    q_min: f64,
) -> Result<RegularizationParams> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(invalid("grid sizes must be positive"));
    }
    if !(horizon > 0.0) {
        return Err(invalid("horizon must be positive"));
    }
    smooth.validate()?;
    if !(alpha0 > 0.0 && 2.0 * alpha0 < smooth.mu0) {
        return Err(invalid(format!(
            "need 0 < 2 alpha0 < mu0, got alpha0 = {alpha0}, mu0 = {}",
            smooth.mu0
        )));
    }
    if !(delta0 > 0.0 && delta0 < 1.0) {
        return Err(invalid(format!("need 0 < delta0 < 1, got {delta0}")));
    }
    if !(q_min > 0.0) {
        return Err(invalid("q_min must be positive"));
    }
    let beta_n = beta_rule(sizes, alpha0);
    let rho_n = symbol.invert(rho_target(sizes, horizon, alpha0), 1e-10)?;
    let (q_n, pi, q_clamped) = match lipschitz_inverse {
        None => (f64::INFINITY, None, false),
        Some(inv) => {
            let pi = pi_bar(sizes, horizon, smooth, alpha0);
            let (q, clamped) = q_level(pi, horizon, delta0, inv, q_min)?;
            (q, Some(pi), clamped)
        }
    };
    Ok(RegularizationParams {
        beta_n,
        rho_n,
        q_n,
        alpha0,
        delta0,
        pi_bar: pi,
        q_clamped,
    })
}

/// `{"beta", "h_hat", "g_hat", "params"}` dump of one estimation run.
#[derive(Clone, Debug, Serialize)]
pub struct EstimatorDump<'a> {
    pub beta: f64,
    pub h_hat: &'a SpectralField,
    pub g_hat: &'a [SpectralField],
    pub params: &'a RegularizationParams,
}
