//! Random observation model: Gaussian perturbations of final-state samples
//! and Brownian perturbations of source paths on a tensor midpoint grid.
//!
//! Randomness is organised in counter-addressed streams. A run seed together
//! with a stream id (grid point, observation kind) selects an independent
//! ChaCha stream, so the output does not depend on evaluation order or thread
//! count. Replicates derive their own seeds through [`derive_seed`].

use crate::error::{invalid, Error, Result};
use crate::spectral::TensorGrid;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Mixes a base seed with a counter (SplitMix64 finaliser).
pub fn derive_seed(seed: u64, counter: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(counter.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const FINAL_STREAM: u64 = 0;
const PATH_STREAM: u64 = 1;

/// Strictly increasing time points `0 = t_0 < ... < t_J = T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeMesh(Vec<f64>);

impl TimeMesh {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid("time mesh needs at least two points"));
        }
        if points[0] != 0.0 {
            return Err(invalid("time mesh must start at 0"));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) || !points.iter().all(|t| t.is_finite()) {
            return Err(invalid("time mesh must be strictly increasing"));
        }
        Ok(Self(points))
    }

    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(invalid("uniform mesh needs T > 0 and at least one step"));
        }
        let h = horizon / steps as f64;
        let mut pts: Vec<f64> = (0..steps).map(|j| j as f64 * h).collect();
        pts.push(horizon);
        Self::new(pts)
    }

    pub fn points(&self) -> &[f64] {
        &self.0
    }

    pub fn horizon(&self) -> f64 {
        *self.0.last().expect("non-empty mesh")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the mesh point equal to `t` within `tol`.
    pub fn index_of(&self, t: f64, tol: f64) -> Option<usize> {
        self.0.iter().position(|&s| (s - t).abs() <= tol)
    }
}

impl TryFrom<Vec<f64>> for TimeMesh {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TimeMesh> for Vec<f64> {
    fn from(m: TimeMesh) -> Self {
        m.0
    }
}

/// Noise levels: per-point standard deviations `Lambda_i <= V_max` for the
/// final-state samples and the Brownian amplitude `vartheta` for the source.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    lambda: Vec<f64>,
    v_max: f64,
    vartheta: f64,
}

impl NoiseSpec {
    /// Constant `Lambda` at every grid point (`V_max = Lambda`).
    pub fn constant(grid: &TensorGrid, lambda: f64, vartheta: f64) -> Result<Self> {
        Self::heterogeneous(vec![lambda; grid.len()], lambda, vartheta)
    }

    pub fn heterogeneous(lambda: Vec<f64>, v_max: f64, vartheta: f64) -> Result<Self> {
        if !(vartheta >= 0.0) {
            return Err(invalid(format!("vartheta must be >= 0, got {vartheta}")));
        }
        if let Some(l) = lambda.iter().find(|&&l| !(l >= 0.0 && l <= v_max)) {
            return Err(invalid(format!(
                "noise level {l} outside [0, V_max = {v_max}]"
            )));
        }
        Ok(Self {
            lambda,
            v_max,
            vartheta,
        })
    }

    pub fn noiseless(grid: &TensorGrid) -> Self {
        Self {
            lambda: vec![0.0; grid.len()],
            v_max: 0.0,
            vartheta: 0.0,
        }
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn vartheta(&self) -> f64 {
        self.vartheta
    }
}

/// Noisy samples `D_i` of the final state and paths `G_i(t_j)` of the source.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub grid: TensorGrid,
    pub d_tilde: Vec<f64>,
    pub time_mesh: TimeMesh,
    /// Indexed `[time][flat point]`.
    pub g_tilde: Vec<Vec<f64>>,
    pub seed: u64,
}

/// `D_i = H(x_i) + Lambda_i Z_i` with `Z_i` i.i.d. standard normal.
pub fn sample_final_observations<H>(
    h: H,
    grid: &TensorGrid,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Vec<f64>>
where
    H: Fn(&[f64]) -> f64 + Sync,
{
    let exact: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| h(&grid.point(i)))
        .collect();
    perturb_final(exact, noise, seed)
}

/// Adds the final-state noise to exact grid values.
pub fn perturb_final(mut exact: Vec<f64>, noise: &NoiseSpec, seed: u64) -> Result<Vec<f64>> {
    if noise.lambda.len() != exact.len() {
        return Err(invalid("noise levels must match the grid"));
    }
    if exact.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("final-state function returned NaN".into()));
    }
    exact.par_iter_mut().enumerate().for_each(|(i, v)| {
        let lam = noise.lambda[i];
        if lam != 0.0 {
            let mut rng = stream(seed, 2 * i as u64 + FINAL_STREAM);
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += lam * z;
        }
    });
    Ok(exact)
}

/// `G_i(t_j) = G(x_i, t_j) + vartheta Psi_i(t_j)` with independent standard
/// Brownian paths sampled by exact Gaussian increments on the mesh.
pub fn sample_source_observations<G>(
    g: G,
    grid: &TensorGrid,
    mesh: &TimeMesh,
    vartheta: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>>
where
    G: Fn(&[f64], f64) -> f64 + Sync,
{
    let points: Vec<Vec<f64>> = grid.points().collect();
    let exact: Vec<Vec<f64>> = mesh
        .points()
        .iter()
        .map(|&t| points.par_iter().map(|x| g(x, t)).collect())
        .collect();
    perturb_source(exact, mesh, vartheta, seed)
}

/// Adds Brownian perturbations to exact source values indexed
/// `[time][point]`.
pub fn perturb_source(
    mut exact: Vec<Vec<f64>>,
    mesh: &TimeMesh,
    vartheta: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if !(vartheta >= 0.0) {
        return Err(invalid("vartheta must be >= 0"));
    }
    let times = mesh.points();
    if exact.len() != times.len() {
        return Err(invalid("source samples must match the time mesh"));
    }
    if exact.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::Data("source function returned NaN".into()));
    }
    if vartheta == 0.0 {
        return Ok(exact);
    }
    let npts = exact[0].len();
    let paths: Vec<Vec<f64>> = (0..npts)
        .into_par_iter()
        .map(|i| brownian_path(seed, i as u64, times, true))
        .collect();
    for (i, path) in paths.iter().enumerate() {
        for (j, psi) in path.iter().enumerate() {
            exact[j][i] += vartheta * psi;
        }
    }
    Ok(exact)
}

/// Standard Brownian motion sampled at `times`, starting from exactly 0.
pub fn brownian_path(seed: u64, point: u64, times: &[f64], draw: bool) -> Vec<f64> {
    let mut path = Vec::with_capacity(times.len());
    if !draw {
        path.resize(times.len(), 0.0);
        return path;
    }
    let mut rng = stream(seed, 2 * point + PATH_STREAM);
    let mut w = 0.0;
    let mut prev = times[0];
    for (j, &t) in times.iter().enumerate() {
        if j > 0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            w += (t - prev).sqrt() * z;
        }
        prev = t;
        path.push(w);
    }
    path
}

/// Draws a complete observation set.
pub fn observe<H, G>(
    h: H,
    g: G,
    grid: &TensorGrid,
    mesh: &TimeMesh,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<ObservationSet>
where
    H: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64], f64) -> f64 + Sync,
{
    let d_tilde = sample_final_observations(h, grid, noise, seed)?;
    let g_tilde = sample_source_observations(g, grid, mesh, noise.vartheta, seed)?;
    Ok(ObservationSet {
        grid: grid.clone(),
        d_tilde,
        time_mesh: mesh.clone(),
        g_tilde,
        seed,
    })
}

/// Like [`observe`], from precomputed exact values (`g_exact` indexed
/// `[time][point]`); draws the same noise for the same seed.
pub fn observe_exact(
    h_exact: Vec<f64>,
    g_exact: Vec<Vec<f64>>,
    grid: &TensorGrid,
    mesh: &TimeMesh,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<ObservationSet> {
    if h_exact.len() != grid.len() || g_exact.iter().any(|row| row.len() != grid.len()) {
        return Err(invalid("exact values must match the grid"));
    }
    let d_tilde = perturb_final(h_exact, noise, seed)?;
    let g_tilde = perturb_source(g_exact, mesh, noise.vartheta, seed)?;
    Ok(ObservationSet {
        grid: grid.clone(),
        d_tilde,
        time_mesh: mesh.clone(),
        g_tilde,
        seed,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationRepr {
    seed: u64,
    grid_sizes: Vec<usize>,
    time_mesh: TimeMesh,
    d_tilde: Vec<f64>,
    g_tilde: Vec<Vec<f64>>,
}

impl Serialize for ObservationSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ObservationRepr {
            seed: self.seed,
            grid_sizes: self.grid.sizes().to_vec(),
            time_mesh: self.time_mesh.clone(),
            d_tilde: self.d_tilde.clone(),
            g_tilde: self.g_tilde.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ObservationSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = ObservationRepr::deserialize(d)?;
        let grid = TensorGrid::new(&r.grid_sizes).map_err(D::Error::custom)?;
        if r.d_tilde.len() != grid.len() {
            return Err(D::Error::custom("d_tilde length does not match grid"));
        }
        if r.g_tilde.len() != r.time_mesh.len()
            || r.g_tilde.iter().any(|row| row.len() != grid.len())
        {
            return Err(D::Error::custom("g_tilde shape does not match mesh x grid"));
        }
        Ok(Self {
            grid,
            d_tilde: r.d_tilde,
            time_mesh: r.time_mesh,
            g_tilde: r.g_tilde,
            seed: r.seed,
        })
    }
}
