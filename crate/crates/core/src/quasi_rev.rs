//! Quasi-reversibility regularization for time- and state-dependent
//! operators.
//!
//! The unbounded backward generator `A - P` is kept, but the comparison
//! operator `P` is re-added only on `W_rho` (as `P_rho`), so that backward
//! growth is capped at `M(sqrt(rho))`. The resulting terminal-value Galerkin
//! system is integrated in reversed time `s = T - t`:
//!
//! `dV/ds = (A - P + P_rho) V - F_Q(V) - G`.

use crate::error::{invalid, Error, Result};
use crate::estimator::FieldSeries;
use crate::spectral::{IndexSet, ModalPlan, MultiIndex, OperatorSymbol, SpectralField};
use crate::truncation::{
    dealias_plan, exponent_limit, lipschitz_violations, nonlinear_coefficients, TrajectorySolution,
};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::sync::Arc;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type FormFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// `P_rho f`: scales modes in `W_rho` by `M(|p|)`, drops the rest.
pub fn apply_p_rho(symbol: &OperatorSymbol, rho: f64, f: &SpectralField) -> SpectralField {
    let pairs = f
        .iter()
        .filter(|(p, _)| p.norm_sq() <= rho)
        .map(|(p, c)| (p.clone(), symbol.eval(p) * c));
    SpectralField::from_pairs(f.dim(), pairs).expect("dimension preserved")
}

/// `F_Q(w) = F(clamp(w, -Q, Q))` together with its local Lipschitz map
/// `K(Q) = sup_{|u| <= Q} |F'(u)|`.
#[derive(Clone)]
pub struct TruncatedNonlinearity {
    f: ScalarFn,
    q: f64,
    k_of_q: ScalarFn,
    inverse: Option<Arc<dyn Fn(f64) -> Option<f64> + Send + Sync>>,
    label: String,
}

impl fmt::Debug for TruncatedNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TruncatedNonlinearity({}, Q = {})", self.label, self.q)
    }
}

impl TruncatedNonlinearity {
    pub fn zero() -> Self {
        Self {
            f: Arc::new(|_| 0.0),
            q: f64::INFINITY,
            k_of_q: Arc::new(|_| 0.0),
            inverse: None,
            label: "zero".into(),
        }
    }

    /// `F(u) = u - u^3`, `K(Q) = 1 + 3 Q^2`.
    pub fn efk(q: f64) -> Result<Self> {
        Self::checked_q(q)?;
        Ok(Self {
            f: Arc::new(|u| u - u * u * u),
            q,
            k_of_q: Arc::new(|q| 1.0 + 3.0 * q * q),
            inverse: Some(Arc::new(|k| (k >= 1.0).then(|| ((k - 1.0) / 3.0).sqrt()))),
            label: "efk".into(),
        })
    }

    /// `F(u) = u^2 (1 - u)`, `K(Q) = 2 Q + 3 Q^2`.
    pub fn huxley(q: f64) -> Result<Self> {
        Self::checked_q(q)?;
        Ok(Self {
            f: Arc::new(|u| u * u * (1.0 - u)),
            q,
            k_of_q: Arc::new(|q| 2.0 * q + 3.0 * q * q),
            inverse: Some(Arc::new(|k| {
                (k >= 0.0).then(|| (-2.0 + (4.0 + 12.0 * k).sqrt()) / 6.0)
            })),
            label: "huxley".into(),
        })
    }

    /// A globally Lipschitz `f` (constant `k`); no clamping.
    pub fn lipschitz<F>(f: F, k: f64, label: &str) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            q: f64::INFINITY,
            k_of_q: Arc::new(move |_| k),
            inverse: None,
            label: label.into(),
        }
    }

    pub fn custom<F, K>(f: F, q: f64, k_of_q: K, label: &str) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        K: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::checked_q(q)?;
        Ok(Self {
            f: Arc::new(f),
            q,
            k_of_q: Arc::new(k_of_q),
            inverse: None,
            label: label.into(),
        })
    }

    fn checked_q(q: f64) -> Result<()> {
        if q > 0.0 {
            Ok(())
        } else {
            Err(invalid(format!(
                "truncation level must be positive, got {q}"
            )))
        }
    }

    /// Same nonlinearity at another level.
    pub fn with_level(&self, q: f64) -> Result<Self> {
        Self::checked_q(q)?;
        Ok(Self { q, ..self.clone() })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `K(Q)` at the current level.
    pub fn k(&self) -> f64 {
        (self.k_of_q)(self.q)
    }

    pub fn k_of(&self, q: f64) -> f64 {
        (self.k_of_q)(q)
    }

    /// Global Lipschitz bound `2 K(Q)` of the truncated map.
    pub fn lipschitz_bound(&self) -> f64 {
        2.0 * self.k()
    }

    /// Inverse of `Q -> K(Q)`, when known in closed form.
    pub fn level_for(&self, k: f64) -> Option<f64> {
        self.inverse.as_ref().and_then(|inv| inv(k))
    }

    pub fn eval(&self, w: f64) -> f64 {
        truncate_value(&*self.f, self.q, w)
    }

    pub fn raw(&self, w: f64) -> f64 {
        (self.f)(w)
    }

    pub fn is_zero(&self) -> bool {
        self.label == "zero"
    }

    /// Random-pair check of `|F_Q(a) - F_Q(b)| <= 2 K(Q) |a - b|`.
    pub fn check_lipschitz(&self, range: f64, pairs: usize, seed: u64) -> usize {
        lipschitz_violations(
            &|w| self.eval(w),
            self.lipschitz_bound(),
            range,
            pairs,
            seed,
        )
    }
}

fn truncate_value(f: &(dyn Fn(f64) -> f64 + Send + Sync), q: f64, w: f64) -> f64 {
    f(w.clamp(-q, q))
}

/// `F_Q(w)`.
pub fn truncate_source(tn: &TruncatedNonlinearity, w: f64) -> f64 {
    tn.eval(w)
}

/// Optional existence-theory constants; only used for warnings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormConstants {
    /// Coercivity: `<(P - A) v, v> >= m_hat |v|_V^2`.
    pub m_hat: Option<f64>,
    /// Continuity: `<(P - A) u, v> <= m_tilde_a |u|_V |v|_V`.
    pub m_tilde_a: Option<f64>,
    /// Lipschitz constant of the diffusion coefficient in the state.
    pub m_tilde: Option<f64>,
    /// Bound on `sup_t |u(t)|_V`.
    pub m_tilde_0: Option<f64>,
}

#[derive(Clone)]
enum PairKind {
    /// `<A(t) psi_p, psi_q> = a(t, |p|^2) delta_pq`.
    Diagonal { a: FormFn, order: u32 },
    /// `A(t, w) u = -div(D(w) grad u)` with `d0 <= D <= d1`.
    Diffusion { d: ScalarFn, d0: f64, d1: f64 },
}

/// An operator `A` and the comparison operator `P` with symbol `M`.
#[derive(Clone)]
pub struct OperatorPair {
    kind: PairKind,
    p_symbol: OperatorSymbol,
    pub constants: FormConstants,
}

impl fmt::Debug for OperatorPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            PairKind::Diagonal { .. } => "diagonal".to_string(),
            PairKind::Diffusion { d0, d1, .. } => format!("diffusion D in [{d0}, {d1}]"),
        };
        write!(f, "OperatorPair({kind}, P = {:?})", self.p_symbol)
    }
}

impl OperatorPair {
    /// Diagonal `A(t)` with eigenvalue `a(t, s)` on modes with `|p|^2 = s`.
    /// `order` selects the energy space: `|psi_p|_V^2 = s^order`.
    pub fn diagonal<F>(a: F, p_symbol: OperatorSymbol, order: u32) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            kind: PairKind::Diagonal {
                a: Arc::new(a),
                order,
            },
            p_symbol,
            constants: FormConstants::default(),
        }
    }

    /// `A(t) = -Gamma0(t) Lap + Gamma1(t) Lap^2`, `P = m1 (-Lap + Lap^2)`.
    pub fn efk<G0, G1>(gamma0: G0, gamma1: G1, m1: f64) -> Result<Self>
    where
        G0: Fn(f64) -> f64 + Send + Sync + 'static,
        G1: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let p = OperatorSymbol::extended_fisher_kolmogorov().scaled(m1)?;
        Ok(Self::diagonal(
            move |t, s| gamma0(t) * s + gamma1(t) * s * s,
            p,
            2,
        ))
    }

    /// EFK pair with `m1 = max_t max(|Gamma0|, |Gamma1|)` sampled on `[0, T]`.
    pub fn efk_sampled<G0, G1>(gamma0: G0, gamma1: G1, horizon: f64) -> Result<Self>
    where
        G0: Fn(f64) -> f64 + Send + Sync + 'static,
        G1: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let m1 = (0..=1000)
            .map(|k| horizon * k as f64 / 1000.0)
            .map(|t| gamma0(t).abs().max(gamma1(t).abs()))
            .fold(0.0, f64::max);
        Self::efk(gamma0, gamma1, m1)
    }

    /// `A(w) u = -div(D(w) grad u)` with `P = d1 (-Lap)`.
    pub fn diffusion<D>(d: D, d0: f64, d1: f64) -> Result<Self>
    where
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(d0 > 0.0 && d1 >= d0) {
            return Err(invalid(format!("need 0 < D0 <= D1, got {d0}, {d1}")));
        }
        let samples = (0..=4000).map(|k| -100.0 + 0.05 * k as f64);
        for u in samples {
            let v = d(u);
            if !(v >= d0 - 1e-12 && v <= d1 + 1e-12) {
                return Err(Error::Config(format!(
                    "D({u}) = {v} outside declared bounds [{d0}, {d1}]"
                )));
            }
        }
        let p = OperatorSymbol::heat().scaled(d1)?;
        Ok(Self {
            kind: PairKind::Diffusion {
                d: Arc::new(d),
                d0,
                d1,
            },
            p_symbol: p,
            constants: FormConstants::default(),
        })
    }

    pub fn with_constants(mut self, constants: FormConstants) -> Self {
        self.constants = constants;
        self
    }

    pub fn p_symbol(&self) -> &OperatorSymbol {
        &self.p_symbol
    }

    pub fn is_state_dependent(&self) -> bool {
        matches!(self.kind, PairKind::Diffusion { .. })
    }

    /// `a(t, s)` for diagonal pairs.
    pub(crate) fn diagonal_rate(&self, t: f64, s: f64) -> Option<f64> {
        match &self.kind {
            PairKind::Diagonal { a, .. } => Some(a(t, s)),
            PairKind::Diffusion { .. } => None,
        }
    }

    /// `D(u)` for diffusion pairs.
    pub(crate) fn diffusivity(&self) -> Option<&(dyn Fn(f64) -> f64 + Send + Sync)> {
        match &self.kind {
            PairKind::Diagonal { .. } => None,
            PairKind::Diffusion { d, .. } => Some(&**d),
        }
    }

    fn v_weight(&self, s: f64) -> f64 {
        match &self.kind {
            PairKind::Diagonal { order, .. } => s.powi(*order as i32),
            PairKind::Diffusion { .. } => s,
        }
    }

    /// `<A(t, w) u, v>` evaluated spectrally (pseudo-spectrally for the
    /// state-dependent case).
    pub fn form(
        &self,
        t: f64,
        w: &SpectralField,
        u: &SpectralField,
        v: &SpectralField,
    ) -> Result<f64> {
        match &self.kind {
            PairKind::Diagonal { a, .. } => Ok(u
                .iter()
                .map(|(p, c)| a(t, p.norm_sq()) * c * v.get(p))
                .sum()),
            PairKind::Diffusion { d, .. } => {
                let dim = u.dim();
                let mut members: Vec<MultiIndex> = w
                    .support()
                    .chain(u.support())
                    .chain(v.support())
                    .cloned()
                    .collect();
                members.sort();
                members.dedup();
                let cutoff = members.iter().map(MultiIndex::norm_sq).fold(1.0, f64::max);
                let plan = dealias_plan(dim, 2.0 * cutoff, 16, &members)?;
                let a =
                    diffusion_apply(&plan, &**d, &w.values_on(&members), &u.values_on(&members));
                Ok(a.iter()
                    .zip(v.values_on(&members))
                    .map(|(x, y)| x * y)
                    .sum())
            }
        }
    }
}

/// `[A(w) u]_p = sum_k <D(w) d_k u, d_k psi_p>` on the plan's modes.
pub(crate) fn diffusion_apply(
    plan: &ModalPlan,
    d: &(dyn Fn(f64) -> f64 + Send + Sync),
    w: &[f64],
    u: &[f64],
) -> Vec<f64> {
    let dw: Vec<f64> = plan.synthesize(w).into_iter().map(d).collect();
    let mut out = vec![0.0; u.len()];
    for k in 0..plan.grid().dim() {
        let mut g = plan.synthesize_gradient(u, k);
        for (gi, di) in g.iter_mut().zip(&dw) {
            *gi *= di;
        }
        for (o, a) in out.iter_mut().zip(plan.analyze_gradient(&g, k)) {
            *o += a;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepper {
    /// Exponential midpoint: the diagonal linear part is integrated exactly
    /// over each step (frozen at the step midpoint), explicit terms by the
    /// two-stage midpoint rule.
    #[default]
    #[serde(alias = "implicit-midpoint")]
    ExponentialMidpoint,
    /// `(I - h L) V_new = V + h N(V)`.
    #[serde(rename = "backward-linearized-euler")]
    LinearizedBackwardEuler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QrConfig {
    pub rho: f64,
    /// Trial space `W_c`; defaults to `max(rho, max |p|^2 over supp H)`.
    #[serde(default)]
    pub galerkin_cutoff: Option<f64>,
    pub time_steps: usize,
    #[serde(default)]
    pub stepper: Stepper,
    #[serde(default = "default_dealias_min")]
    pub dealias_min: usize,
    /// Monitoring radius for the state; defaults to `10 |H|`.
    #[serde(default)]
    pub ball_radius: Option<f64>,
}

fn default_dealias_min() -> usize {
    32
}

impl QrConfig {
    pub fn new(rho: f64, time_steps: usize) -> Self {
        Self {
            rho,
            galerkin_cutoff: None,
            time_steps,
            stepper: Stepper::default(),
            dealias_min: default_dealias_min(),
            ball_radius: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) {
            return Err(invalid("rho must be >= 0"));
        }
        if self.time_steps < 2 {
            return Err(invalid("time_steps must be >= 2"));
        }
        if let Some(c) = self.galerkin_cutoff {
            if c < self.rho {
                return Err(invalid(format!(
                    "Galerkin cutoff {c} must contain W_rho (rho = {})",
                    self.rho
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QrDiagnostics {
    /// Smallest sampled diagonal entry of `P - A` (for diffusion: smallest
    /// `D1 - D(U(x))` seen on the assembly grid).
    pub coercivity_min: f64,
    /// First time (original orientation) at which `|U(t)| > R`.
    pub ball_exit_time: Option<f64>,
    /// `M(sqrt(rho))`.
    pub cap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QrSolution {
    pub trajectory: TrajectorySolution,
    pub diagnostics: QrDiagnostics,
}

impl QrSolution {
    pub fn initial_state(&self) -> &SpectralField {
        &self.trajectory.fields[0]
    }

    /// `{"trajectory": [...], "diagnostics": {...}}`.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "trajectory": self.trajectory.to_json_value(),
            "diagnostics": self.diagnostics,
        })
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.to_json_value())?;
        Ok(())
    }
}

/// Backward integration for a state-independent pair `A(t)`.
pub fn solve_qr_linear_in_state(
    pair: &OperatorPair,
    tn: &TruncatedNonlinearity,
    cfg: &QrConfig,
    h_hat: &SpectralField,
    g_hat: Option<&FieldSeries>,
    horizon: f64,
) -> Result<QrSolution> {
    if pair.is_state_dependent() {
        return Err(invalid(
            "state-dependent pair passed to the linear-in-state solver",
        ));
    }
    solve_qr(pair, tn, cfg, h_hat, g_hat, horizon)
}

/// Backward integration for `A(t, w) = -div(D(w) grad)`.
pub fn solve_qr_nonlinear_in_state(
    pair: &OperatorPair,
    tn: &TruncatedNonlinearity,
    cfg: &QrConfig,
    h_hat: &SpectralField,
    g_hat: Option<&FieldSeries>,
    horizon: f64,
) -> Result<QrSolution> {
    if !pair.is_state_dependent() {
        return Err(invalid(
            "state-independent pair passed to the nonlinear-in-state solver",
        ));
    }
    solve_qr(pair, tn, cfg, h_hat, g_hat, horizon)
}

struct System<'a> {
    pair: &'a OperatorPair,
    tn: &'a TruncatedNonlinearity,
    g_hat: Option<&'a FieldSeries>,
    members: &'a [MultiIndex],
    s: Vec<f64>,
    m_bar: Vec<f64>,
    inside: Vec<bool>,
    plan: Option<ModalPlan>,
    coercivity_min: f64,
}

impl System<'_> {
    /// Diagonal rate `L_p(t)` of the reversed-time system; `d_ref` is the
    /// reference diffusivity for the state-dependent case.
    fn rates(&self, t: f64, d_ref: f64) -> Vec<f64> {
        (0..self.members.len())
            .map(|i| {
                let a = match &self.pair.kind {
                    PairKind::Diagonal { a, .. } => a(t, self.s[i]),
                    PairKind::Diffusion { .. } => d_ref * self.s[i],
                };
                let cap = if self.inside[i] { self.m_bar[i] } else { 0.0 };
                a - self.m_bar[i] + cap
            })
            .collect()
    }

    /// Grid mean of `D(U)` and the smallest `D1 - D(U)`.
    fn reference_diffusivity(&mut self, v: &[f64]) -> f64 {
        match (&self.pair.kind, &self.plan) {
            (PairKind::Diffusion { d, d1, .. }, Some(plan)) => {
                let vals = plan.synthesize(v);
                let mut sum = 0.0;
                for &u in &vals {
                    let dv = d(u);
                    sum += dv;
                    self.coercivity_min = self.coercivity_min.min(d1 - dv);
                }
                sum / vals.len() as f64
            }
            _ => 0.0,
        }
    }

    /// Explicit part `N(t, V)`.
    fn explicit(&self, t: f64, v: &[f64], d_ref: f64) -> Vec<f64> {
        let mut out = match &self.plan {
            Some(plan) if !self.tn.is_zero() => {
                let q = self.tn.q();
                let f = &*self.tn.f;
                nonlinear_coefficients(plan, v, &move |w| -truncate_value(f, q, w))
            }
            _ => vec![0.0; v.len()],
        };
        if let (PairKind::Diffusion { d, .. }, Some(plan)) = (&self.pair.kind, &self.plan) {
            let av = diffusion_apply(plan, &**d, v, v);
            for i in 0..v.len() {
                out[i] += av[i] - d_ref * self.s[i] * v[i];
            }
        }
        if let Some(g) = self.g_hat {
            for (o, gi) in out.iter_mut().zip(g.values_at(t, self.members)) {
                *o -= gi;
            }
        }
        out
    }
}

fn exp_checked(x: f64) -> Result<f64> {
    if x > exponent_limit() {
        return Err(Error::Overflow { exponent: x });
    }
    Ok(x.exp())
}

fn solve_qr(
    pair: &OperatorPair,
    tn: &TruncatedNonlinearity,
    cfg: &QrConfig,
    h_hat: &SpectralField,
    g_hat: Option<&FieldSeries>,
    horizon: f64,
) -> Result<QrSolution> {
    cfg.validate()?;
    if !(horizon > 0.0) {
        return Err(invalid("horizon must be positive"));
    }
    let dim = h_hat.dim();
    if let Some(g) = g_hat {
        if g.dim() != dim {
            return Err(invalid("source and terminal data dimensions differ"));
        }
    }
    let cutoff = cfg
        .galerkin_cutoff
        .unwrap_or_else(|| cfg.rho.max(h_hat.max_norm_sq()));
    let set = IndexSet::new(dim, cutoff)?;
    let members = set.members();
    let s: Vec<f64> = members.iter().map(MultiIndex::norm_sq).collect();
    let m_bar: Vec<f64> = members.iter().map(|p| pair.p_symbol.eval(p)).collect();
    let inside: Vec<bool> = s.iter().map(|&x| x <= cfg.rho).collect();
    let cap = pair.p_symbol.eval_s(cfg.rho);

    let needs_grid = !tn.is_zero() || pair.is_state_dependent();
    let plan = if needs_grid {
        Some(dealias_plan(dim, cutoff, cfg.dealias_min, members)?)
    } else {
        None
    };

    let h = horizon / cfg.time_steps as f64;
    let mut sys = System {
        pair,
        tn,
        g_hat,
        members,
        s,
        m_bar,
        inside,
        plan,
        coercivity_min: f64::INFINITY,
    };

    // Coercivity of P - A on sampled times and every trial mode.
    if let PairKind::Diagonal { a, .. } = &pair.kind {
        for k in 0..=2 * cfg.time_steps {
            let t = horizon * k as f64 / (2 * cfg.time_steps) as f64;
            for i in 0..members.len() {
                let gap = sys.m_bar[i] - a(t, sys.s[i]);
                sys.coercivity_min = sys.coercivity_min.min(gap);
                if gap < -1e-12 * (1.0 + sys.m_bar[i].abs()) {
                    return Err(Error::Config(format!(
                        "P - A not coercive at t = {t}, |p|^2 = {}: {gap}",
                        sys.s[i]
                    )));
                }
            }
        }
    }
    check_declared_constants(pair, &sys);

    let radius = cfg.ball_radius.unwrap_or(10.0 * h_hat.l2_norm());
    let mut ball_exit = None;
    let mut traj = vec![h_hat.values_on(members)];
    for k in 0..cfg.time_steps {
        let t0 = horizon - k as f64 * h;
        let t1 = horizon - (k + 1) as f64 * h;
        let tm = 0.5 * (t0 + t1);
        let v = traj.last().unwrap();
        let d_ref = sys.reference_diffusivity(v);
        let next = match cfg.stepper {
            Stepper::ExponentialMidpoint => {
                let rates = sys.rates(tm, d_ref);
                let mut e_half = Vec::with_capacity(rates.len());
                let mut e_full = Vec::with_capacity(rates.len());
                for &r in &rates {
                    e_half.push(exp_checked(0.5 * h * r)?);
                    e_full.push(exp_checked(h * r)?);
                }
                let n0 = sys.explicit(t0, v, d_ref);
                let half: Vec<f64> = (0..v.len())
                    .map(|i| e_half[i] * (v[i] + 0.5 * h * n0[i]))
                    .collect();
                let n1 = sys.explicit(tm, &half, d_ref);
                (0..v.len())
                    .map(|i| e_full[i] * v[i] + h * e_half[i] * n1[i])
                    .collect::<Vec<f64>>()
            }
            Stepper::LinearizedBackwardEuler => {
                let rates = sys.rates(t1, d_ref);
                let n0 = sys.explicit(t0, v, d_ref);
                let mut out = Vec::with_capacity(v.len());
                for i in 0..v.len() {
                    let denom = 1.0 - h * rates[i];
                    if denom <= 0.0 {
                        return Err(Error::Numerical(format!(
                            "step {h} too large for growth rate {}",
                            rates[i]
                        )));
                    }
                    out.push((v[i] + h * n0[i]) / denom);
                }
                out
            }
        };
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "step rejected at t = {t1}: non-finite state"
            )));
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if ball_exit.is_none() && norm > radius {
            ball_exit = Some(t1);
            log::warn!("state left the ball of radius {radius} at t = {t1}");
        }
        traj.push(next);
    }
    if let Some(m0) = pair.constants.m_tilde_0 {
        let worst = traj
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&sys.s)
                    .map(|(c, &s)| pair.v_weight(s) * c * c)
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if worst > m0 {
            log::warn!("declared M0 = {m0} below the computed V-norm {worst}");
        }
    }
    traj.reverse();
    let fields = traj
        .iter()
        .map(|c| SpectralField::from_members(dim, members, c))
        .collect::<Result<Vec<_>>>()?;
    let times = (0..=cfg.time_steps)
        .map(|k| {
            if k == cfg.time_steps {
                horizon
            } else {
                k as f64 * h
            }
        })
        .collect();
    Ok(QrSolution {
        trajectory: TrajectorySolution {
            times,
            fields,
            rho: cfg.rho,
            picard_residuals: Vec::new(),
            converged: true,
            extra_modes_without_data: cutoff > cfg.rho,
        },
        diagnostics: QrDiagnostics {
            coercivity_min: sys.coercivity_min,
            ball_exit_time: ball_exit,
            cap,
        },
    })
}

fn check_declared_constants(pair: &OperatorPair, sys: &System<'_>) {
    let c = &pair.constants;
    if let PairKind::Diagonal { a, .. } = &pair.kind {
        for i in 0..sys.members.len() {
            let s = sys.s[i];
            let gap = sys.m_bar[i] - a(0.0, s);
            let w = pair.v_weight(s);
            if let Some(m_hat) = c.m_hat {
                if gap < m_hat * w - 1e-12 {
                    log::warn!("coercivity constant {m_hat} violated at |p|^2 = {s}");
                    break;
                }
            }
            if let Some(ma) = c.m_tilde_a {
                if gap > ma * w + 1e-12 {
                    log::warn!("continuity constant {ma} violated at |p|^2 = {s}");
                    break;
                }
            }
        }
    }
    if let (PairKind::Diffusion { d, .. }, Some(mt)) = (&pair.kind, c.m_tilde) {
        if lipschitz_violations(&**d, mt, 10.0, 1000, 7) > 0 {
            log::warn!("declared Lipschitz constant {mt} of D is violated");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(p: u32) -> MultiIndex {
        MultiIndex::single(p).unwrap()
    }

    fn efk_pair(m1: f64) -> OperatorPair {
        OperatorPair::efk(move |_| m1, move |_| m1, m1).unwrap()
    }

    #[test]
    fn p_rho_examples() {
        let sym = OperatorSymbol::extended_fisher_kolmogorov();
        let f = SpectralField::mode(m(2), 0.5);
        assert_eq!(apply_p_rho(&sym, 4.0, &f).get(&m(2)), 0.5 * 20.0);
        assert!(apply_p_rho(&sym, 3.0, &f).is_empty());
    }

    #[test]
    fn p_rho_norm_cap() {
        let sym = OperatorSymbol::extended_fisher_kolmogorov()
            .scaled(1.5)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = IndexSet::new(2, 30.0).unwrap();
        for _ in 0..200 {
            let vals: Vec<f64> = (0..set.len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let f = SpectralField::from_members(2, set.members(), &vals).unwrap();
            let f = f.scaled(1.0 / f.l2_norm());
            assert!(apply_p_rho(&sym, 9.0, &f).l2_norm() <= sym.eval_s(9.0));
        }
    }

    #[test]
    fn truncation_examples() {
        let efk = TruncatedNonlinearity::efk(2.0).unwrap();
        assert_eq!(truncate_source(&efk, 1.0), 0.0);
        assert_eq!(truncate_source(&efk, 5.0), -6.0);
        assert_eq!(truncate_source(&efk, 0.0), efk.raw(0.0));
        assert_eq!(efk.k(), 13.0);
        let hux = TruncatedNonlinearity::huxley(1.0).unwrap();
        assert_eq!(truncate_source(&hux, -3.0), 2.0);
        assert_eq!(efk.check_lipschitz(10.0, 10_000, 1), 0);
        assert_eq!(hux.check_lipschitz(10.0, 10_000, 2), 0);
        let q = efk.level_for(13.0).unwrap();
        assert!((q - 2.0).abs() < 1e-12);
        let q = hux.level_for(hux.k_of(0.7)).unwrap();
        assert!((q - 0.7).abs() < 1e-12);
        assert!(TruncatedNonlinearity::efk(0.0).is_err());
    }

    #[test]
    fn diagonal_a_equals_p_closed_form() {
        let pair = efk_pair(1.0);
        let h = SpectralField::from_pairs(1, vec![(m(1), 1.0), (m(2), 0.5), (m(3), 0.25)]).unwrap();
        let mut cfg = QrConfig::new(4.0, 200);
        cfg.galerkin_cutoff = Some(9.0);
        let sol =
            solve_qr_linear_in_state(&pair, &TruncatedNonlinearity::zero(), &cfg, &h, None, 0.5)
                .unwrap();
        for (t, f) in sol.trajectory.times.iter().zip(&sol.trajectory.fields) {
            for p in 1..=2u32 {
                let mb = pair.p_symbol().eval(&m(p));
                let exact = ((0.5 - t) * mb).exp() * h.get(&m(p));
                assert!((f.get(&m(p)) - exact).abs() <= 1e-10 * exact.abs());
            }
            // outside W_rho: constant
            assert!((f.get(&m(3)) - 0.25).abs() < 1e-14);
        }
        assert_eq!(sol.diagnostics.cap, 20.0);
        assert_eq!(sol.diagnostics.coercivity_min, 0.0);
    }

    #[test]
    fn euler_stepper_converges_first_order() {
        let pair = efk_pair(1.0);
        let h = SpectralField::mode(m(1), 1.0);
        let exact = (0.5f64 * 2.0).exp();
        let mut errs = Vec::new();
        for steps in [200, 400] {
            let mut cfg = QrConfig::new(2.0, steps);
            cfg.stepper = Stepper::LinearizedBackwardEuler;
            let sol = solve_qr_linear_in_state(
                &pair,
                &TruncatedNonlinearity::zero(),
                &cfg,
                &h,
                None,
                0.5,
            )
            .unwrap();
            errs.push((sol.initial_state().get(&m(1)) - exact).abs());
        }
        let order = (errs[0] / errs[1]).log2();
        assert!((order - 1.0).abs() < 0.1, "{errs:?}");
    }

    #[test]
    fn coercivity_violation_is_config_error() {
        let pair = OperatorPair::efk(|_| 2.0, |_| 1.0, 1.0).unwrap();
        let h = SpectralField::mode(m(1), 1.0);
        let r = solve_qr_linear_in_state(
            &pair,
            &TruncatedNonlinearity::zero(),
            &QrConfig::new(2.0, 10),
            &h,
            None,
            1.0,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn constant_diffusion_matches_linear() {
        let h = SpectralField::from_pairs(1, vec![(m(1), 1.0), (m(2), -0.4), (m(4), 0.1)]).unwrap();
        let tn = TruncatedNonlinearity::huxley(2.0).unwrap();
        let cfg = QrConfig::new(4.0, 100);
        let lin = OperatorPair::diagonal(
            |_, s| 1.5 * s,
            OperatorSymbol::heat().scaled(1.5).unwrap(),
            1,
        );
        let a = solve_qr_linear_in_state(&lin, &tn, &cfg, &h, None, 0.3).unwrap();
        let dif = OperatorPair::diffusion(|_| 1.5, 1.5, 1.5).unwrap();
        let b = solve_qr_nonlinear_in_state(&dif, &tn, &cfg, &h, None, 0.3).unwrap();
        for (x, y) in a.trajectory.fields.iter().zip(&b.trajectory.fields) {
            assert!(x.distance_sq(y).sqrt() < 1e-10);
        }
    }

    #[test]
    fn diffusion_form_matches_quadrature() {
        // <-(D(w) u')', v> = int D(w) u' v' for a smooth D.
        let pair = OperatorPair::diffusion(|u: f64| 1.0 + 0.1 / (1.0 + u * u), 1.0, 1.1).unwrap();
        let w = SpectralField::from_pairs(1, vec![(m(1), 0.7), (m(2), 0.2)]).unwrap();
        let u = SpectralField::from_pairs(1, vec![(m(1), 1.0), (m(3), 0.3)]).unwrap();
        let v = SpectralField::mode(m(2), 1.0);
        let got = pair.form(0.0, &w, &u, &v).unwrap();
        let n = 4000;
        let hx = std::f64::consts::PI / n as f64;
        let c = crate::spectral::SINE_NORM;
        let reference: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) * hx;
                let wv = c * (0.7 * x.sin() + 0.2 * (2.0 * x).sin());
                let du = c * (x.cos() + 0.9 * (3.0 * x).cos());
                let dv = c * 2.0 * (2.0 * x).cos();
                (1.0 + 0.1 / (1.0 + wv * wv)) * du * dv * hx
            })
            .sum();
        assert!((got - reference).abs() < 1e-4, "{got} vs {reference}");
    }

    #[test]
    fn stability_cap_on_diagonal_instance() {
        let pair = OperatorPair::efk(|t: f64| 1.0 + 0.1 * t.sin(), |_| 1.0, 1.1).unwrap();
        let set = IndexSet::new(1, 16.0).unwrap();
        let vals: Vec<f64> = (0..set.len()).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let h = SpectralField::from_members(1, set.members(), &vals).unwrap();
        let cfg = QrConfig::new(4.0, 200);
        let tn = TruncatedNonlinearity::zero();
        let sol = solve_qr_linear_in_state(&pair, &tn, &cfg, &h, None, 0.5).unwrap();
        let cap = sol.diagnostics.cap;
        assert!(sol.initial_state().l2_norm() <= (0.5 * cap).exp() * h.l2_norm());
        // continuous dependence on the data
        let delta = 1e-3;
        let h2 = h.axpy(delta, &SpectralField::mode(m(2), 1.0)).unwrap();
        let sol2 = solve_qr_linear_in_state(&pair, &tn, &cfg, &h2, None, 0.5).unwrap();
        let diff = sol.initial_state().distance_sq(sol2.initial_state()).sqrt();
        assert!(diff <= (0.5 * (cap + 2.0)).exp() * delta * (1.0 + 1e-8));
    }

    #[test]
    fn ball_exit_reported() {
        let pair = efk_pair(1.0);
        let h = SpectralField::mode(m(1), 1.0);
        let mut cfg = QrConfig::new(2.0, 50);
        cfg.ball_radius = Some(1.5);
        let sol =
            solve_qr_linear_in_state(&pair, &TruncatedNonlinearity::zero(), &cfg, &h, None, 1.0)
                .unwrap();
        let t = sol.diagnostics.ball_exit_time.unwrap();
        // e^{2 (1 - t)} first exceeds 1.5 just below t = 1 - ln(1.5)/2
        assert!(t < 1.0 - 1.5f64.ln() / 2.0 && t > 1.0 - 1.5f64.ln() / 2.0 - 0.03);
        let v = sol.to_json_value();
        assert!(v["diagnostics"]["cap"].is_number());
        assert_eq!(v["trajectory"].as_array().unwrap().len(), 51);
    }

    #[test]
    fn config_validation() {
        let pair = efk_pair(1.0);
        let h = SpectralField::mode(m(1), 1.0);
        let tn = TruncatedNonlinearity::zero();
        let mut cfg = QrConfig::new(4.0, 1);
        assert!(solve_qr_linear_in_state(&pair, &tn, &cfg, &h, None, 1.0).is_err());
        cfg.time_steps = 10;
        cfg.galerkin_cutoff = Some(2.0);
        assert!(solve_qr_linear_in_state(&pair, &tn, &cfg, &h, None, 1.0).is_err());
        let dif = OperatorPair::diffusion(|_| 1.0, 1.0, 1.0).unwrap();
        assert!(
            solve_qr_linear_in_state(&dif, &tn, &QrConfig::new(4.0, 10), &h, None, 1.0).is_err()
        );
        assert!(OperatorPair::diffusion(|u: f64| 1.0 + u * u, 1.0, 2.0).is_err());
    }
}
