//! Tensor sine eigenbasis on `Omega = (0, pi)^d`.
//!
//! The basis functions are
//! `psi_p(x) = (2/pi)^(d/2) * prod_k sin(p_k x_k)`, an orthonormal basis of
//! `L^2(Omega)` made of Dirichlet eigenfunctions of the Laplacian. Everything
//! else in the crate expresses fields through their coefficients in this basis.

mod field;
mod grid;
mod index;
mod plan;
mod symbol;

pub use field::{SpectralField, Weight};
pub use grid::{make_grid, TensorGrid};
pub use index::{IndexSet, MultiIndex, DEFAULT_INDEX_CAP};
pub use plan::ModalPlan;
pub use symbol::{symbol_eval, OperatorSymbol, SymbolKind};

use crate::error::{invalid, Result};
use std::f64::consts::PI;

/// `sqrt(2/pi)`, the one-dimensional normalisation of the sine basis.
pub const SINE_NORM: f64 = 0.797_884_560_802_865_4;

/// Evaluates `psi_p(x)`.
pub fn eigenfunction_eval(p: &MultiIndex, x: &[f64]) -> Result<f64> {
    if p.dim() != x.len() {
        return Err(invalid(format!(
            "index has dimension {} but point has dimension {}",
            p.dim(),
            x.len()
        )));
    }
    Ok(p.components()
        .iter()
        .zip(x)
        .map(|(&pk, &xk)| SINE_NORM * (f64::from(pk) * xk).sin())
        .product())
}

/// Number of midpoint-grid points per axis needed to resolve products of
/// modes with components up to `ceil(sqrt(cutoff))` without aliasing back
/// onto the retained modes.
pub fn dealias_points(cutoff: f64, min_points: usize) -> usize {
    let pmax = cutoff.max(0.0).sqrt().ceil() as usize;
    (2 * pmax + 1).max(min_points).max(1)
}

/// `pi^d`.
pub(crate) fn pi_pow(d: usize) -> f64 {
    PI.powi(d as i32)
}
