//! Time-discrete quasistatic morphoelasticity.
//!
//! Each step updates the growth tensor with an exponential integrator
//! `G_i = exp(τ M(G_{i-1}, (K_τ∇y)_{i-1}[, μ])) G_{i-1}` and then re-equilibrates
//! the deformation by minimizing the polyconvex stored energy of the grown
//! body. Optional layers couple a diffusing nutrient field and search over a
//! finite-dimensional family of nutrient controls.

pub mod config;
pub mod control;
pub mod error;
pub mod fem;
pub mod growth;
pub mod hyperelastic;
pub mod linalg;
pub mod mesh;
pub mod minimize;
pub mod nutrient;
pub mod output;
pub mod selftest;
pub mod study;
pub mod tensor;
pub mod tolerances;

pub use error::{Error, Result};
