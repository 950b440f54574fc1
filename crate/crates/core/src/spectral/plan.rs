use super::{MultiIndex, TensorGrid, SINE_NORM};
use crate::error::{invalid, Result};

/// Precomputed separable sine/cosine tables linking a set of modes to a
/// midpoint grid.
///
/// Analysis computes `(pi^d / prod n_k) * sum_i v_i * psi_p(x_i)` for every
/// mode at once by contracting one axis at a time (a type-II sine transform
/// structure); synthesis evaluates a finite sine series at every grid point.
/// Gradient variants replace the sine factor on one axis by its derivative.
#[derive(Clone, Debug)]
pub struct ModalPlan {
    grid: TensorGrid,
    members: Vec<MultiIndex>,
    box_dims: Vec<usize>,
    box_pos: Vec<usize>,
    sin: Vec<Vec<f64>>,
    dcos: Vec<Vec<f64>>,
}

impl ModalPlan {
    pub fn new(grid: TensorGrid, members: &[MultiIndex]) -> Result<Self> {
        let d = grid.dim();
        if let Some(p) = members.iter().find(|p| p.dim() != d) {
            return Err(invalid(format!(
                "mode {p:?} does not match grid dimension {d}"
            )));
        }
        let box_dims: Vec<usize> = (0..d)
            .map(|k| {
                members
                    .iter()
                    .map(|p| p.components()[k] as usize)
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let box_pos = members
            .iter()
            .map(|p| {
                p.components()
                    .iter()
                    .zip(&box_dims)
                    .fold(0, |acc, (&c, &n)| acc * n + (c as usize - 1))
            })
            .collect();
        let mut sin = Vec::with_capacity(d);
        let mut dcos = Vec::with_capacity(d);
        for k in 0..d {
            let xs = grid.axis(k);
            let pk = box_dims[k];
            let mut s = Vec::with_capacity(pk * xs.len());
            let mut c = Vec::with_capacity(pk * xs.len());
            for p in 1..=pk {
                let pf = p as f64;
                for &x in xs {
                    s.push(SINE_NORM * (pf * x).sin());
                    c.push(SINE_NORM * pf * (pf * x).cos());
                }
            }
            sin.push(s);
            dcos.push(c);
        }
        Ok(Self {
            grid,
            members: members.to_vec(),
            box_dims,
            box_pos,
            sin,
            dcos,
        })
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn members(&self) -> &[MultiIndex] {
        &self.members
    }

    /// Discrete coefficients of grid values against every mode.
    pub fn analyze(&self, values: &[f64]) -> Vec<f64> {
        self.analyze_with(values, None)
    }

    /// `(pi^d / prod n_k) * sum_i v_i * d/dx_axis psi_p(x_i)` for every mode.
    pub fn analyze_gradient(&self, values: &[f64], axis: usize) -> Vec<f64> {
        self.analyze_with(values, Some(axis))
    }

    /// Values of `sum_p c_p psi_p` at every grid point.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        self.synthesize_with(coeffs, None)
    }

    /// Values of `sum_p c_p d/dx_axis psi_p` at every grid point.
    pub fn synthesize_gradient(&self, coeffs: &[f64], axis: usize) -> Vec<f64> {
        self.synthesize_with(coeffs, Some(axis))
    }

    fn table(&self, k: usize, deriv: Option<usize>) -> &[f64] {
        if deriv == Some(k) {
            &self.dcos[k]
        } else {
            &self.sin[k]
        }
    }

    fn analyze_with(&self, values: &[f64], deriv: Option<usize>) -> Vec<f64> {
        assert_eq!(values.len(), self.grid.len(), "values must match the grid");
        if self.members.is_empty() {
            return Vec::new();
        }
        let mut shape = self.grid.sizes().to_vec();
        let mut data = values.to_vec();
        for k in 0..shape.len() {
            data = contract(
                &data,
                &shape,
                k,
                self.table(k, deriv),
                self.box_dims[k],
                false,
            );
            shape[k] = self.box_dims[k];
        }
        let w = self.grid.weight();
        self.box_pos.iter().map(|&i| w * data[i]).collect()
    }

    fn synthesize_with(&self, coeffs: &[f64], deriv: Option<usize>) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.members.len(), "one coefficient per mode");
        if self.members.is_empty() {
            return vec![0.0; self.grid.len()];
        }
        let mut shape = self.box_dims.clone();
        let mut data = vec![0.0; shape.iter().product()];
        for (&pos, &c) in self.box_pos.iter().zip(coeffs) {
            data[pos] = c;
        }
        for k in 0..shape.len() {
            let n = self.grid.sizes()[k];
            data = contract(&data, &shape, k, self.table(k, deriv), n, true);
            shape[k] = n;
        }
        data
    }
}

/// Contracts `axis` of a row-major tensor with a `P x n` table.
///
/// With `transpose == false` the axis has length `n` and becomes `rows = P`;
/// otherwise the axis has length `P` and becomes `rows = n`.
fn contract(
    data: &[f64],
    shape: &[usize],
    axis: usize,
    table: &[f64],
    rows: usize,
    transpose: bool,
) -> Vec<f64> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let m = shape[axis];
    let row_len = if transpose { rows } else { m };
    let mut out = vec![0.0; outer * rows * inner];
    for o in 0..outer {
        for r in 0..rows {
            let dst = &mut out[(o * rows + r) * inner..(o * rows + r + 1) * inner];
            for j in 0..m {
                let w = if transpose {
                    table[j * row_len + r]
                } else {
                    table[r * row_len + j]
                };
                let src = &data[(o * m + j) * inner..(o * m + j + 1) * inner];
                for (a, &b) in dst.iter_mut().zip(src) {
                    *a += w * b;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{eigenfunction_eval, IndexSet};

    fn direct_analysis(grid: &TensorGrid, values: &[f64], p: &MultiIndex) -> f64 {
        grid.weight()
            * grid
                .points()
                .zip(values)
                .map(|(x, v)| v * eigenfunction_eval(p, &x).unwrap())
                .sum::<f64>()
    }

    #[test]
    fn analysis_matches_direct_sum_3d() {
        let grid = TensorGrid::new(&[5, 4, 6]).unwrap();
        let set = IndexSet::new(3, 30.0).unwrap();
        let plan = ModalPlan::new(grid.clone(), set.members()).unwrap();
        let values: Vec<f64> = (0..grid.len())
            .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0)
            .collect();
        let fast = plan.analyze(&values);
        for (p, f) in set.members().iter().zip(&fast) {
            let slow = direct_analysis(&grid, &values, p);
            assert!((f - slow).abs() <= 1e-12 * slow.abs().max(1.0), "{p:?}");
        }
    }

    #[test]
    fn synthesis_matches_pointwise_sum() {
        let grid = TensorGrid::new(&[7, 3]).unwrap();
        let set = IndexSet::new(2, 20.0).unwrap();
        let plan = ModalPlan::new(grid.clone(), set.members()).unwrap();
        let coeffs: Vec<f64> = (0..set.len()).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let vals = plan.synthesize(&coeffs);
        for (flat, x) in grid.points().enumerate() {
            let direct: f64 = set
                .members()
                .iter()
                .zip(&coeffs)
                .map(|(p, c)| c * eigenfunction_eval(p, &x).unwrap())
                .sum();
            assert!((vals[flat] - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_synthesis_matches_derivative() {
        let grid = TensorGrid::new(&[9]).unwrap();
        let members = vec![MultiIndex::single(3).unwrap()];
        let plan = ModalPlan::new(grid.clone(), &members).unwrap();
        let vals = plan.synthesize_gradient(&[2.0], 0);
        for (flat, x) in grid.points().enumerate() {
            let exact = 2.0 * SINE_NORM * 3.0 * (3.0 * x[0]).cos();
            assert!((vals[flat] - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn empty_plan() {
        let grid = TensorGrid::new(&[4]).unwrap();
        let plan = ModalPlan::new(grid, &[]).unwrap();
        assert!(plan.analyze(&[1.0; 4]).is_empty());
        assert_eq!(plan.synthesize(&[]), vec![0.0; 4]);
    }
}
