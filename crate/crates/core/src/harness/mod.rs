//! Manufactured problems, Monte-Carlo error studies and the configuration
//! consumed by the command-line tool.

pub mod config;
pub mod forward;
pub mod invariants;
pub mod study;

pub use config::{
    DiffusionSpec, ExperimentConfig, FamilySpec, NoiseConfig, NonlinearityKind, OracleOptions,
    QrOptions, SourceSpec, SymbolName, TimeProfile, Tuning,
};
pub use forward::{forward_solve, forward_solve_with, refinement_order, ForwardSolution};
pub use invariants::{run_checks, CheckResult};
pub use study::{
    convergence_slopes, mise_study, mise_study_with, MiseEntry, MiseReport, SlopeEntry,
    StudyOptions,
};

use crate::error::{Error, Result};
use crate::estimator::{
    build_g_hat, build_h_hat, select_parameters, FieldSeries, RegularizationParams,
};
use crate::observation::{derive_seed, observe_exact, NoiseSpec, ObservationSet, TimeMesh};
use crate::quasi_rev::{
    solve_qr_linear_in_state, solve_qr_nonlinear_in_state, OperatorPair, QrConfig, QrSolution,
};
use crate::spectral::{OperatorSymbol, SpectralField, TensorGrid};
use crate::truncation::{solve_truncated, BackwardProblem, SourceTerm, TrajectorySolution};

#[derive(Clone, Debug)]
pub(crate) enum Operator {
    Constant(OperatorSymbol),
    Pair(OperatorPair),
}

/// A runtime problem family: operator, nonlinearity and source.
#[derive(Clone, Debug)]
pub struct Family {
    pub spec: FamilySpec,
    pub nonlinearity: NonlinearityKind,
    pub source: Option<SourceSpec>,
    pub(crate) operator: Operator,
}

impl Family {
    pub fn new(
        spec: FamilySpec,
        nonlinearity: NonlinearityKind,
        source: Option<SourceSpec>,
        horizon: f64,
    ) -> Result<Self> {
        let operator = match &spec {
            FamilySpec::Constant { symbol, scale } => Operator::Constant(symbol.symbol(*scale)?),
            FamilySpec::TimeDependent { gamma0, gamma1, m1 } => {
                let (g0, g1) = (gamma0.clone(), gamma1.clone());
                let pair = match m1 {
                    Some(m1) => OperatorPair::efk(move |t| g0.eval(t), move |t| g1.eval(t), *m1)?,
                    None => OperatorPair::efk_sampled(
                        move |t| g0.eval(t),
                        move |t| g1.eval(t),
                        horizon,
                    )?,
                };
                Operator::Pair(pair)
            }
            FamilySpec::NonlinearDiffusion { diffusion } => Operator::Pair(diffusion.pair()?),
        };
        Ok(Self {
            spec,
            nonlinearity,
            source,
            operator,
        })
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Self::new(
            cfg.family.clone(),
            cfg.nonlinearity,
            cfg.source.clone(),
            cfg.horizon,
        )
    }

    /// Symbol whose inverse fixes the cutoff `rho`: `M` for constant
    /// families, the comparison symbol of `P` otherwise.
    pub fn cutoff_symbol(&self) -> &OperatorSymbol {
        match &self.operator {
            Operator::Constant(sym) => sym,
            Operator::Pair(pair) => pair.p_symbol(),
        }
    }

    pub fn pair(&self) -> Option<&OperatorPair> {
        match &self.operator {
            Operator::Pair(p) => Some(p),
            Operator::Constant(_) => None,
        }
    }

    pub fn uses_quasi_reversibility(&self) -> bool {
        matches!(self.operator, Operator::Pair(_))
    }

    pub fn source_at(&self, t: f64) -> Option<SpectralField> {
        self.source
            .as_ref()
            .map(|s| s.field.scaled(s.profile.eval(t)))
    }
}

/// The output of one reconstruction.
#[derive(Clone, Debug)]
pub enum Reconstruction {
    Truncated(TrajectorySolution),
    Qr(QrSolution),
}

impl Reconstruction {
    pub fn trajectory(&self) -> &TrajectorySolution {
        match self {
            Reconstruction::Truncated(t) => t,
            Reconstruction::Qr(q) => &q.trajectory,
        }
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        match self {
            Reconstruction::Truncated(t) => t.to_json_value(),
            Reconstruction::Qr(q) => q.to_json_value(),
        }
    }
}

/// A configured experiment with its forward oracle.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub family: Family,
    pub oracle: ForwardSolution,
    pub mesh: TimeMesh,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let family = Family::from_config(&cfg)?;
        let oracle = forward_solve_with(
            &cfg.initial,
            &family,
            cfg.horizon,
            cfg.time_steps,
            &cfg.oracle,
        )?;
        let mesh = TimeMesh::uniform(cfg.horizon, cfg.time_steps)?;
        Ok(Self {
            cfg,
            family,
            oracle,
            mesh,
        })
    }

    /// Seed of replicate `r` at sweep position `n_index`.
    pub fn replicate_seed(&self, n_index: usize, r: usize) -> u64 {
        derive_seed(derive_seed(self.cfg.seed, n_index as u64), r as u64)
    }

    pub fn grid(&self, n: usize) -> Result<TensorGrid> {
        TensorGrid::new(&self.cfg.sizes(n))
    }

    pub fn parameters(&self, n: usize) -> Result<RegularizationParams> {
        let tn = self.cfg.nonlinearity.truncated(1.0)?;
        let inverse = |k: f64| tn.level_for(k);
        let inv: Option<&dyn Fn(f64) -> Option<f64>> =
            if self.cfg.nonlinearity.is_globally_lipschitz() {
                None
            } else {
                Some(&inverse)
            };
        select_parameters(
            &self.cfg.sizes(n),
            self.cfg.horizon,
            &self.cfg.smoothness,
            self.cfg.tuning.alpha0,
            self.cfg.tuning.delta0,
            self.family.cutoff_symbol(),
            inv,
            self.cfg.tuning.q_min,
        )
    }

    /// Exact final-state and source values on the grid (`[time][point]`).
    pub fn exact_values(&self, grid: &TensorGrid) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let h = self.oracle.terminal().synthesize(grid)?;
        let g = match &self.family.source {
            Some(src) => {
                let base = src.field.synthesize(grid)?;
                self.mesh
                    .points()
                    .iter()
                    .map(|&t| {
                        let a = src.profile.eval(t);
                        base.iter().map(|v| a * v).collect()
                    })
                    .collect()
            }
            None => vec![vec![0.0; grid.len()]; self.mesh.len()],
        };
        Ok((h, g))
    }

    pub fn noise(&self, grid: &TensorGrid) -> Result<NoiseSpec> {
        NoiseSpec::constant(grid, self.cfg.noise.lambda, self.cfg.noise.vartheta)
    }

    pub fn observe(&self, n: usize, seed: u64) -> Result<ObservationSet> {
        let grid = self.grid(n)?;
        let (h, g) = self.exact_values(&grid)?;
        observe_exact(h, g, &grid, &self.mesh, &self.noise(&grid)?, seed)
    }

    fn has_source_data(&self) -> bool {
        self.family.source.is_some() || self.cfg.noise.vartheta > 0.0
    }

    pub fn estimate(
        &self,
        obs: &ObservationSet,
        params: &RegularizationParams,
    ) -> Result<(SpectralField, Option<FieldSeries>)> {
        let h_hat = build_h_hat(obs, params.beta_n)?;
        let g_hat = if self.has_source_data() {
            Some(build_g_hat(obs, params.beta_n)?)
        } else {
            None
        };
        Ok((h_hat, g_hat))
    }

    pub fn reconstruct(
        &self,
        obs: &ObservationSet,
        params: &RegularizationParams,
    ) -> Result<Reconstruction> {
        let (h_hat, g_hat) = self.estimate(obs, params)?;
        self.reconstruct_from(h_hat, g_hat, params)
    }

    pub fn reconstruct_from(
        &self,
        h_hat: SpectralField,
        g_hat: Option<FieldSeries>,
        params: &RegularizationParams,
    ) -> Result<Reconstruction> {
        let cfg = &self.cfg;
        match &self.family.operator {
            Operator::Constant(sym) => {
                let source = self.source_term(params.q_n)?;
                let problem =
                    BackwardProblem::new(sym.clone(), source, h_hat, g_hat, self.mesh.clone())?
                        .with_data_cutoff(params.beta_n);
                Ok(Reconstruction::Truncated(solve_truncated(
                    &problem,
                    params.rho_n,
                    &cfg.solver,
                )?))
            }
            Operator::Pair(pair) => {
                let tn = cfg.nonlinearity.truncated(params.q_n)?;
                let qr = QrConfig {
                    rho: params.rho_n,
                    galerkin_cutoff: cfg.qr.galerkin_cutoff.map(|c| c.max(params.rho_n)),
                    time_steps: cfg.time_steps,
                    stepper: cfg.qr.stepper,
                    dealias_min: cfg.qr.dealias_min,
                    ball_radius: cfg.qr.ball_radius,
                };
                let sol = if pair.is_state_dependent() {
                    solve_qr_nonlinear_in_state(
                        pair,
                        &tn,
                        &qr,
                        &h_hat,
                        g_hat.as_ref(),
                        cfg.horizon,
                    )?
                } else {
                    solve_qr_linear_in_state(pair, &tn, &qr, &h_hat, g_hat.as_ref(), cfg.horizon)?
                };
                Ok(Reconstruction::Qr(sol))
            }
        }
    }

    /// Source term for the truncation solver; non-Lipschitz kinds are
    /// clamped at level `q`.
    fn source_term(&self, q: f64) -> Result<SourceTerm> {
        let kind = self.cfg.nonlinearity;
        match kind {
            NonlinearityKind::Zero => Ok(SourceTerm::zero()),
            NonlinearityKind::Sine => Ok(SourceTerm::sine()),
            NonlinearityKind::Efk | NonlinearityKind::Huxley => {
                let tn = kind.truncated(q)?;
                let k = tn.lipschitz_bound();
                if !k.is_finite() {
                    return Err(Error::Config(
                        "non-Lipschitz source needs a finite level".into(),
                    ));
                }
                SourceTerm::from_fn(
                    move |w| tn.eval(w),
                    k,
                    kind_label(kind),
                    (2.0 * q).max(10.0),
                )
            }
        }
    }
}

fn kind_label(kind: NonlinearityKind) -> &'static str {
    match kind {
        NonlinearityKind::Zero => "zero",
        NonlinearityKind::Sine => "sin",
        NonlinearityKind::Efk => "efk",
        NonlinearityKind::Huxley => "huxley",
    }
}
