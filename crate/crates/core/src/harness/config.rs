//! JSON experiment configuration.

use crate::error::{Error, Result};
use crate::estimator::SmoothnessProfile;
use crate::quasi_rev::{OperatorPair, Stepper, TruncatedNonlinearity};
use crate::spectral::{OperatorSymbol, SpectralField};
use crate::truncation::SolverOptions;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Scalar coefficient profile in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TimeProfile {
    Constant {
        value: f64,
    },
    /// `mean + amplitude * sin(frequency * t)`.
    Sine {
        mean: f64,
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
    },
    /// `value + slope * t`.
    Linear {
        value: f64,
        slope: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::Constant { value } => value,
            TimeProfile::Sine {
                mean,
                amplitude,
                frequency,
            } => mean + amplitude * (frequency * t).sin(),
            TimeProfile::Linear { value, slope } => value + slope * t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymbolName {
    Heat,
    Biharmonic,
    Efk,
    SwiftHohenberg,
}

impl SymbolName {
    pub fn symbol(self, scale: f64) -> Result<OperatorSymbol> {
        let base = match self {
            SymbolName::Heat => OperatorSymbol::heat(),
            SymbolName::Biharmonic => OperatorSymbol::biharmonic(),
            SymbolName::Efk => OperatorSymbol::extended_fisher_kolmogorov(),
            SymbolName::SwiftHohenberg => OperatorSymbol::swift_hohenberg(),
        };
        base.scaled(scale)
    }
}

/// Diffusion coefficient `D(u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DiffusionSpec {
    Constant {
        value: f64,
    },
    /// `base + amplitude / (1 + u^2)`.
    Rational {
        base: f64,
        amplitude: f64,
    },
}

impl DiffusionSpec {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            DiffusionSpec::Constant { value } => (value, value),
            DiffusionSpec::Rational { base, amplitude } => {
                (base + amplitude.min(0.0), base + amplitude.max(0.0))
            }
        }
    }

    pub fn pair(&self) -> Result<OperatorPair> {
        let (d0, d1) = self.bounds();
        match *self {
            DiffusionSpec::Constant { value } => OperatorPair::diffusion(move |_| value, d0, d1),
            DiffusionSpec::Rational { base, amplitude } => {
                OperatorPair::diffusion(move |u| base + amplitude / (1.0 + u * u), d0, d1)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilySpec {
    /// `u_t + M(-Lap) u = F(u) + G`, solved by Fourier truncation.
    Constant {
        symbol: SymbolName,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `u_t - Gamma0(t) Lap u + Gamma1(t) Lap^2 u = F(u) + G`, solved by
    /// quasi-reversibility with `P = m1 (-Lap + Lap^2)`.
    TimeDependent {
        gamma0: TimeProfile,
        gamma1: TimeProfile,
        /// Defaults to the sampled `max |Gamma_i|`.
        #[serde(default)]
        m1: Option<f64>,
    },
    /// `u_t - div(D(u) grad u) = F(u) + G` with `P = D1 (-Lap)`.
    NonlinearDiffusion { diffusion: DiffusionSpec },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearityKind {
    #[default]
    Zero,
    /// `sin(u)`, globally Lipschitz with `K = 1`.
    Sine,
    /// `u - u^3`.
    Efk,
    /// `u^2 (1 - u)`.
    Huxley,
}

impl NonlinearityKind {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            NonlinearityKind::Zero => 0.0,
            NonlinearityKind::Sine => u.sin(),
            NonlinearityKind::Efk => u - u * u * u,
            NonlinearityKind::Huxley => u * u * (1.0 - u),
        }
    }

    pub fn is_globally_lipschitz(self) -> bool {
        matches!(self, NonlinearityKind::Zero | NonlinearityKind::Sine)
    }

    /// The truncated form at level `q` (`q` ignored for Lipschitz kinds).
    pub fn truncated(self, q: f64) -> Result<TruncatedNonlinearity> {
        match self {
            NonlinearityKind::Zero => Ok(TruncatedNonlinearity::zero()),
            NonlinearityKind::Sine => Ok(TruncatedNonlinearity::lipschitz(f64::sin, 1.0, "sin")),
            NonlinearityKind::Efk => TruncatedNonlinearity::efk(q),
            NonlinearityKind::Huxley => TruncatedNonlinearity::huxley(q),
        }
    }
}

/// `G(x, t) = profile(t) * field(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub field: SpectralField,
    pub profile: TimeProfile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation of the final-state point noise.
    pub lambda: f64,
    /// Amplitude of the Brownian source perturbation.
    #[serde(default)]
    pub vartheta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tuning {
    pub alpha0: f64,
    #[serde(default = "half")]
    pub delta0: f64,
    #[serde(default = "one")]
    pub q_min: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QrOptions {
    #[serde(default)]
    pub stepper: Stepper,
    #[serde(default)]
    pub galerkin_cutoff: Option<f64>,
    #[serde(default = "dealias_default")]
    pub dealias_min: usize,
    #[serde(default)]
    pub ball_radius: Option<f64>,
}

fn dealias_default() -> usize {
    32
}

impl Default for QrOptions {
    fn default() -> Self {
        Self {
            stepper: Stepper::default(),
            galerkin_cutoff: None,
            dealias_min: dealias_default(),
            ball_radius: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleOptions {
    /// Modes `|p|^2 <= cutoff` carried by the forward solver.
    #[serde(default = "oracle_cutoff")]
    pub cutoff: f64,
    #[serde(default = "oracle_tol")]
    pub tol: f64,
    #[serde(default = "oracle_doublings")]
    pub max_doublings: usize,
}

fn oracle_cutoff() -> f64 {
    64.0
}

fn oracle_tol() -> f64 {
    1e-10
}

fn oracle_doublings() -> usize {
    10
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            cutoff: oracle_cutoff(),
            tol: oracle_tol(),
            max_doublings: oracle_doublings(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: FamilySpec,
    #[serde(default)]
    pub nonlinearity: NonlinearityKind,
    pub dim: usize,
    /// Points per axis; each entry is one cube grid of the sweep.
    pub grid_sizes: Vec<usize>,
    pub horizon: f64,
    pub time_steps: usize,
    pub noise: NoiseConfig,
    pub smoothness: SmoothnessProfile,
    pub tuning: Tuning,
    /// Ground-truth initial state.
    pub initial: SpectralField,
    #[serde(default)]
    pub source: Option<SourceSpec>,
    pub replicates: usize,
    pub seed: u64,
    /// Defaults to `{0, T/4, T/2}`.
    #[serde(default)]
    pub report_times: Option<Vec<f64>>,
    /// Compare `H_beta` with `H` instead of reconstructing.
    #[serde(default)]
    pub estimator_only: bool,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub qr: QrOptions,
    #[serde(default)]
    pub oracle: OracleOptions,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn report_times(&self) -> Vec<f64> {
        self.report_times
            .clone()
            .unwrap_or_else(|| vec![0.0, 0.25 * self.horizon, 0.5 * self.horizon])
    }

    pub fn sizes(&self, n: usize) -> Vec<usize> {
        vec![n; self.dim]
    }

    /// Mesh index of a report time.
    pub fn step_index(&self, t: f64) -> Option<usize> {
        let x = t / self.horizon * self.time_steps as f64;
        let k = x.round();
        ((x - k).abs() < 1e-9 && k >= 0.0 && k <= self.time_steps as f64).then_some(k as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(bad("dim must be >= 1"));
        }
        if self.grid_sizes.is_empty() || self.grid_sizes.iter().any(|&n| n < 2) {
            return Err(bad("grid_sizes must be a non-empty list of sizes >= 2"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(bad("horizon must be positive"));
        }
        if self.time_steps < 2 {
            return Err(bad("time_steps must be >= 2"));
        }
        if !(self.noise.lambda >= 0.0) || !(self.noise.vartheta >= 0.0) {
            return Err(bad("noise levels must be >= 0"));
        }
        if self.smoothness.mu.len() != 1 && self.smoothness.mu.len() != self.dim {
            return Err(bad("smoothness.mu needs 1 or dim entries"));
        }
        self.smoothness.validate().map_err(|e| bad(e.to_string()))?;
        if self.initial.dim() != self.dim {
            return Err(bad("initial field dimension differs from dim"));
        }
        if let Some(src) = &self.source {
            if src.field.dim() != self.dim {
                return Err(bad("source field dimension differs from dim"));
            }
        }
        if self.replicates == 0 {
            return Err(bad("replicates must be >= 1"));
        }
        for t in self.report_times() {
            if self.step_index(t).is_none() {
                return Err(bad(format!(
                    "report time {t} is not a point of the {}-step mesh on [0, {}]",
                    self.time_steps, self.horizon
                )));
            }
        }
        match &self.family {
            FamilySpec::Constant { scale, .. } if !(*scale > 0.0) => {
                return Err(bad("symbol scale must be positive"));
            }
            FamilySpec::TimeDependent { m1: Some(m1), .. } if !(*m1 > 0.0) => {
                return Err(bad("m1 must be positive"));
            }
            FamilySpec::NonlinearDiffusion { diffusion } => {
                let (d0, _) = diffusion.bounds();
                if !(d0 > 0.0) {
                    return Err(bad(
                        "diffusion coefficient must be bounded below by a positive constant",
                    ));
                }
            }
            _ => {}
        }
        if !(self.oracle.cutoff >= self.initial.max_norm_sq()) {
            return Err(bad("oracle.cutoff must cover the initial field's support"));
        }
        Ok(())
    }
}
