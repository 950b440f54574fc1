//! Reconstruction of initial states for nonlinear backward parabolic
//! problems on the box `(0, pi)^d` from randomly perturbed grid samples.
//!
//! The crate is organised bottom-up:
//!
//! * [`spectral`]: tensor sine eigenbasis, index sets, grids, operator symbols
//!   and sine-series fields.
//! * [`observation`]: the random observation model (Gaussian point noise on the
//!   final state, Brownian perturbations of the source).
//! * [`estimator`]: spectral-cutoff regression estimators of the final state and
//!   source, plus a-priori parameter selection.
//! * [`truncation`]: Fourier-truncation solver for constant-coefficient operators.
//! * [`quasi_rev`]: quasi-reversibility solver for time- and state-dependent
//!   operators.
//! * [`harness`]: manufactured problems, Monte-Carlo error studies and the
//!   configuration schema used by the command-line tool.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod estimator;
pub mod harness;
pub mod observation;
pub mod quasi_rev;
pub mod spectral;
pub mod truncation;

pub use error::{Error, Result};
pub use estimator::{
    aliasing_kernel, build_g_hat, build_h_hat, discrete_coefficient, discrete_coefficients,
    select_parameters, FieldSeries, RegularizationParams, SmoothnessProfile,
};
pub use observation::{NoiseSpec, ObservationSet, TimeMesh};
pub use quasi_rev::{
    apply_p_rho, solve_qr_linear_in_state, solve_qr_nonlinear_in_state, OperatorPair, QrConfig,
    QrSolution, Stepper, TruncatedNonlinearity,
};
pub use spectral::{
    eigenfunction_eval, make_grid, symbol_eval, IndexSet, MultiIndex, OperatorSymbol,
    SpectralField, SymbolKind, TensorGrid, Weight,
};
pub use truncation::{
    initial_state, propagate_mode, solve_truncated, BackwardProblem, SolverOptions, SourceTerm,
    TrajectorySolution,
};
