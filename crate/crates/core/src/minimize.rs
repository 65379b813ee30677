//! Equilibrium solve: limited-memory BFGS on the free nodal unknowns with
//! Armijo backtracking against the `+∞` energy barrier.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::fem::{DeformationField, ElasticProblem};
use crate::hyperelastic::ExtReal;
use crate::tolerances::{ARMIJO_C1, LINE_SEARCH_STEP_FLOOR, MINIMIZER_GTOL};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinimizeOptions {
    /// Stop once `‖∇E‖_∞ ≤ gtol · max(1, |E|)` on the free unknowns.
    pub gtol: f64,
    pub max_iter: usize,
    /// Number of stored correction pairs.
    pub memory: usize,
    pub step_floor: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            gtol: MINIMIZER_GTOL,
            max_iter: 5000,
            memory: 12,
            step_floor: LINE_SEARCH_STEP_FLOOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizeReport {
    pub iterations: usize,
    pub energy: f64,
    pub initial_energy: f64,
    pub grad_norm: f64,
    /// Energy after each accepted iterate, starting with the initial one.
    pub energy_trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Dofs {
    free: Vec<usize>,
}

impl Dofs {
    fn gather(&self, field: &[[f64; 3]]) -> Vec<f64> {
        self.free.iter().flat_map(|&v| field[v]).collect()
    }

    fn scatter(&self, x: &[f64], into: &mut DeformationField) {
        for (k, &v) in self.free.iter().enumerate() {
            into.0[v] = [x[3 * k], x[3 * k + 1], x[3 * k + 2]];
        }
    }
}

/// Local minimizer of `problem` warm-started at `y_init`.
///
/// Every iterate keeps the Γ_D values of `y_init` and has finite energy;
/// the returned energy never exceeds the initial one.
pub fn minimize_energy(
    problem: &ElasticProblem,
    y_init: &DeformationField,
    opts: &MinimizeOptions,
) -> Result<(DeformationField, MinimizeReport)> {
    let dofs = Dofs {
        free: problem.mesh.free_nodes(),
    };
    let mut y = y_init.clone();
    let (mut f, g_nodes) = problem.energy_and_gradient(&y)?;
    let mut x = dofs.gather(&y.0);
    let mut g = dofs.gather(&g_nodes);
    let initial_energy = f;
    let mut trace = vec![f];
    let tol = |f: f64| opts.gtol * f.abs().max(1.0);

    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iter = 0;
    loop {
        let gnorm = inf_norm(&g);
        if gnorm <= tol(f) || x.is_empty() {
            return Ok((
                y,
                MinimizeReport {
                    iterations: iter,
                    energy: f,
                    initial_energy,
                    grad_norm: gnorm,
                    energy_trace: trace,
                },
            ));
        }
        if iter >= opts.max_iter {
            return Err(Error::MaxIterations {
                iterations: iter,
                grad_norm: gnorm,
                tol: tol(f),
            });
        }

        let mut d = two_loop(&g, &pairs);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        // Without curvature information, cap the first trial displacement.
        let mut alpha = if pairs.is_empty() {
            (1e-2 / inf_norm(&d)).min(1.0)
        } else {
            1.0
        };

        let mut trial = y.clone();
        let mut x_new;
        loop {
            x_new = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect::<Vec<_>>();
            dofs.scatter(&x_new, &mut trial);
            if let ExtReal::Finite(ft) = problem.total_energy(&trial) {
                if ft <= f + ARMIJO_C1 * alpha * slope {
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < opts.step_floor {
                return Err(Error::LineSearchFailure {
                    iteration: iter,
                    energy: f,
                    step_floor: opts.step_floor,
                });
            }
        }

        let (f_new, g_nodes) = problem.energy_and_gradient(&trial)?;
        let g_new = dofs.gather(&g_nodes);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, yv, 1.0 / sy));
        }
        y = trial;
        x = x_new;
        g = g_new;
        f = f_new;
        trace.push(f);
        iter += 1;
    }
}

fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
