use crate::error::{invalid, Result};
use std::f64::consts::PI;

/// Tensor midpoint grid with `x_{i_k} = pi (2 i_k - 1) / (2 n_k)`.
///
/// Points are addressed by a flat row-major index (last axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct TensorGrid {
    sizes: Vec<usize>,
    axes: Vec<Vec<f64>>,
}

pub fn make_grid(sizes: &[usize]) -> Result<TensorGrid> {
    TensorGrid::new(sizes)
}

impl TensorGrid {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(invalid("grid needs at least one axis"));
        }
        if sizes.contains(&0) {
            return Err(invalid(format!(
                "grid sizes must be positive, got {sizes:?}"
            )));
        }
        let axes = sizes
            .iter()
            .map(|&n| {
                (1..=n)
                    .map(|i| PI * (2 * i - 1) as f64 / (2 * n) as f64)
                    .collect()
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            axes,
        })
    }

    /// Uniform grid with `n` points on each of `dim` axes.
    pub fn cube(dim: usize, n: usize) -> Result<Self> {
        Self::new(&vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        &self.axes[k]
    }

    /// Quadrature weight `pi^d / prod n_k`.
    pub fn weight(&self) -> f64 {
        super::pi_pow(self.dim()) / self.len() as f64
    }

    /// Coordinates of the point with flat index `flat`.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.point_into(flat, &mut out);
        out
    }

    pub fn point_into(&self, mut flat: usize, out: &mut [f64]) {
        for k in (0..self.dim()).rev() {
            let n = self.sizes[k];
            out[k] = self.axes[k][flat % n];
            flat /= n;
        }
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_points() {
        let g = make_grid(&[2]).unwrap();
        assert_eq!(g.axis(0), &[PI / 4.0, 3.0 * PI / 4.0]);
        let g = make_grid(&[1]).unwrap();
        assert_eq!(g.point(0), vec![PI / 2.0]);
    }

    #[test]
    fn two_dimensional_row_major() {
        let g = make_grid(&[2, 1]).unwrap();
        let pts: Vec<_> = g.points().collect();
        assert_eq!(
            pts,
            vec![vec![PI / 4.0, PI / 2.0], vec![3.0 * PI / 4.0, PI / 2.0]]
        );
    }

    #[test]
    fn rejects_zero_size() {
        assert!(make_grid(&[3, 0]).is_err());
        assert!(make_grid(&[]).is_err());
    }

    #[test]
    fn exact_midpoint_formula() {
        let g = make_grid(&[5, 7, 3]).unwrap();
        assert_eq!(g.len(), 105);
        for flat in 0..g.len() {
            let p = g.point(flat);
            let (i0, i1, i2) = (flat / 21, (flat / 3) % 7, flat % 3);
            assert_eq!(p[0], PI * (2 * i0 + 1) as f64 / 10.0);
            assert_eq!(p[1], PI * (2 * i1 + 1) as f64 / 14.0);
            assert_eq!(p[2], PI * (2 * i2 + 1) as f64 / 6.0);
        }
    }
}
