//! Numerical tolerances used across the crate, collected in one place.

/// Relative tolerance of the per-step identity `det G_i = e^{τ tr M} det G_{i-1}`.
pub const DET_IDENTITY_REL: f64 = 1e-10;

/// Relative tolerance of `det exp(A) = e^{tr A}`.
pub const EXP_DET_REL: f64 = 1e-12;

/// Default minimizer stopping tolerance, scaled by `max(1, |energy|)`.
pub const MINIMIZER_GTOL: f64 = 1e-8;

/// Smallest step length accepted by the backtracking line search.
pub const LINE_SEARCH_STEP_FLOOR: f64 = 1e-16;

/// Armijo sufficient-decrease constant.
pub const ARMIJO_C1: f64 = 1e-4;

/// Relative residual target of the nutrient conjugate-gradient solve.
pub const CG_REL_TOL: f64 = 1e-12;

/// Accepted relative residual of the nutrient linear system after the solve.
pub const NUTRIENT_RESIDUAL_REL: f64 = 1e-10;

/// Slack applied to analytic upper/lower bounds checked in floating point.
pub const BOUND_SLACK: f64 = 1e-12;
