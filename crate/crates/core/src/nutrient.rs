//! Nutrient field coupled to growth: implicit Euler for
//! `∂_t μ − νΔμ = h − H(κ ∗ y)` with Dirichlet data on all of ∂Ω.
//!
//! Each step solves `(M_L + ντ K) μ_i = M_L F_i` on interior nodes, with
//! `F_i = μ_{i−1} + τ h_i − τ H((κ∗_τ y)_{i−1})`, `M_L` the lumped P1 mass and
//! `K` the P1 stiffness. On Kuhn meshes `K` has non-positive off-diagonal
//! entries, so the system is an M-matrix and obeys a discrete maximum
//! principle.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::DeformationField;
use crate::growth::{empty_trajectory, MorphoModel, Stepper, TimeKernel, Trajectory};
use crate::linalg::{cg_jacobi, norm2, CgReport, CsrMatrix};
use crate::mesh::Mesh;
use crate::tensor::{vdot, vsub, Vec3};
use crate::tolerances::{BOUND_SLACK, CG_REL_TOL, NUTRIENT_RESIDUAL_REL};

/// Scalar function of `(t, x)`.
#[derive(Clone)]
pub struct ScalarField(Arc<dyn Fn(f64, Vec3) -> f64 + Send + Sync>);

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ScalarField(..)")
    }
}

impl ScalarField {
    pub fn new<F: Fn(f64, Vec3) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        ScalarField(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _| c)
    }

    pub fn eval(&self, t: f64, x: Vec3) -> f64 {
        (self.0)(t, x)
    }

    /// `(1/τ)∫_{t0}^{t1} f(s, x) ds` by the midpoint rule.
    pub fn interval_average(&self, t0: f64, t1: f64, x: Vec3) -> f64 {
        self.eval(0.5 * (t0 + t1), x)
    }

    /// Nodal interval averages over step `i` of a grid with spacing `tau`.
    pub fn step_average(&self, mesh: &Mesh, tau: f64, i: usize) -> Vec<f64> {
        let (t0, t1) = ((i - 1) as f64 * tau, i as f64 * tau);
        mesh.vertices.iter().map(|&x| self.interval_average(t0, t1, x)).collect()
    }
}

/// Consumption map `H(v) = h_c / (1 + |v − x_c|²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Consumption {
    pub h_c: f64,
    pub x_c: Vec3,
}

impl Consumption {
    pub fn zero() -> Self {
        Consumption {
            h_c: 0.0,
            x_c: [0.0; 3],
        }
    }

    pub fn eval(&self, v: Vec3) -> f64 {
        let d = vsub(v, self.x_c);
        self.h_c / (1.0 + vdot(d, d))
    }

    pub fn sup_bound(&self) -> f64 {
        self.h_c.abs()
    }

    /// `sup |∇H| = |h_c| · 3√3/8`, attained at `|v − x_c| = 1/√3`.
    pub fn lip_bound(&self) -> f64 {
        self.h_c.abs() * 3.0 * 3f64.sqrt() / 8.0
    }
}

#[derive(Clone, Debug)]
pub struct NutrientProblem {
    /// Diffusivity ν > 0.
    pub nu: f64,
    pub source: ScalarField,
    pub consumption: Consumption,
    pub boundary: ScalarField,
    pub initial: ScalarField,
}

impl NutrientProblem {
    pub fn new(nu: f64) -> Self {
        NutrientProblem {
            nu,
            source: ScalarField::constant(0.0),
            consumption: Consumption::zero(),
            boundary: ScalarField::constant(0.0),
            initial: ScalarField::constant(0.0),
        }
    }
}

/// `(κ ∗_τ y)_{i−1} = Σ_{j=0}^{i−1} τ κ_j y_{i−1−j}` at every node.
pub fn kappa_conv_y(history: &[&DeformationField], kappa: &[f64], tau: f64, i: usize) -> Vec<Vec3> {
    assert!(i >= 1 && history.len() >= i && kappa.len() >= i);
    let n = history[0].0.len();
    (0..n)
        .map(|v| {
            let mut acc = [0.0; 3];
            for j in 0..i {
                let y = history[i - 1 - j].0[v];
                let w = tau * kappa[j];
                for c in 0..3 {
                    acc[c] += w * y[c];
                }
            }
            acc
        })
        .collect()
}

/// P1 stiffness matrix and lumped mass vector.
pub fn assemble_stiffness_and_mass(mesh: &Mesh) -> (CsrMatrix, Vec<f64>) {
    let mut triplets = Vec::with_capacity(16 * mesh.num_tets());
    let mut mass = vec![0.0; mesh.num_nodes()];
    for (t, tet) in mesh.tets.iter().enumerate() {
        let vol = mesh.volumes[t];
        let g = &mesh.shape_grads[t];
        for a in 0..4 {
            mass[tet[a]] += 0.25 * vol;
            for b in 0..4 {
                triplets.push((tet[a], tet[b], vol * vdot(g[a], g[b])));
            }
        }
    }
    (CsrMatrix::from_triplets(mesh.num_nodes(), triplets), mass)
}

/// Assembled implicit-Euler operator `M_L + ντK` split into interior and
/// boundary blocks.
#[derive(Clone, Debug)]
pub struct NutrientSolver {
    pub nu: f64,
    pub tau: f64,
    mass: Vec<f64>,
    interior: Vec<usize>,
    boundary: Vec<bool>,
    /// Interior block, indexed by interior position.
    a_ii: CsrMatrix,
    /// Interior rows, boundary columns (global node index).
    a_ib: Vec<Vec<(usize, f64)>>,
}

impl NutrientSolver {
    pub fn new(mesh: &Mesh, nu: f64, tau: f64) -> Result<Self> {
        if !(nu > 0.0) || !(tau > 0.0) {
            return Err(Error::Degenerate(format!("nutrient step needs ν > 0 and τ > 0 (ν = {nu}, τ = {tau})")));
        }
        let (k, mass) = assemble_stiffness_and_mass(mesh);
        let boundary = mesh.boundary_node.clone();
        let interior: Vec<usize> = (0..mesh.num_nodes()).filter(|&v| !boundary[v]).collect();
        let mut pos = vec![usize::MAX; mesh.num_nodes()];
        for (p, &v) in interior.iter().enumerate() {
            pos[v] = p;
        }
        let mut triplets = Vec::new();
        let mut a_ib = Vec::with_capacity(interior.len());
        for (p, &v) in interior.iter().enumerate() {
            let mut coupling = Vec::new();
            for (c, kv) in k.row(v) {
                let val = nu * tau * kv + if c == v { mass[v] } else { 0.0 };
                if boundary[c] {
                    coupling.push((c, val));
                } else {
                    triplets.push((p, pos[c], val));
                }
            }
            a_ib.push(coupling);
        }
        Ok(NutrientSolver {
            nu,
            tau,
            mass,
            a_ii: CsrMatrix::from_triplets(interior.len(), triplets),
            interior,
            boundary,
            a_ib,
        })
    }

    /// `μ_i` from `F_i` and the boundary values `μ_{D,i}` (only entries at
    /// boundary nodes are read). `guess` seeds the iteration.
    pub fn solve(&self, f: &[f64], mu_d: &[f64], guess: &[f64]) -> Result<(Vec<f64>, CgReport)> {
        let b: Vec<f64> = self
            .interior
            .iter()
            .zip(&self.a_ib)
            .map(|(&v, coupling)| {
                let lift: f64 = coupling.iter().map(|&(c, a)| a * mu_d[c]).sum();
                self.mass[v] * f[v] - lift
            })
            .collect();
        let x0: Vec<f64> = self.interior.iter().map(|&v| guess[v]).collect();
        let max_iter = 10 * self.interior.len().max(10);
        let (x, rep) = cg_jacobi(&self.a_ii, &b, &x0, CG_REL_TOL, max_iter)?;
        let ax = self.a_ii.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let bn = norm2(&b);
        if bn > 0.0 && norm2(&r) > NUTRIENT_RESIDUAL_REL * bn {
            return Err(Error::LinearSolver {
                iterations: rep.iterations,
                residual: norm2(&r) / bn,
            });
        }
        let mut mu = vec![0.0; self.mass.len()];
        for (v, m) in mu.iter_mut().enumerate() {
            if self.boundary[v] {
                *m = mu_d[v];
            }
        }
        for (p, &v) in self.interior.iter().enumerate() {
            mu[v] = x[p];
        }
        Ok((mu, rep))
    }
}

/// Right-hand side `F_i = μ_{i−1} + τ h_i − τ H(conv_y)` at the nodes.
pub fn nutrient_rhs(mu_prev: &[f64], h: &[f64], conv_y: &[Vec3], consumption: &Consumption, tau: f64) -> Vec<f64> {
    mu_prev
        .iter()
        .zip(h)
        .zip(conv_y)
        .map(|((m, hv), v)| m + tau * hv - tau * consumption.eval(*v))
        .collect()
}

/// One implicit-Euler nutrient step on `mesh`.
pub fn nutrient_step(
    mu_prev: &[f64],
    h: &[f64],
    conv_y: &[Vec3],
    consumption: &Consumption,
    mu_d: &[f64],
    nu: f64,
    tau: f64,
    mesh: &Mesh,
) -> Result<Vec<f64>> {
    let solver = NutrientSolver::new(mesh, nu, tau)?;
    let f = nutrient_rhs(mu_prev, h, conv_y, consumption, tau);
    solver.solve(&f, mu_d, mu_prev).map(|(mu, _)| mu)
}

/// Which nutrient value enters the growth update of step `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MuOrder {
    /// `M(G_{i−1}, (K_τ∇y)_{i−1}, μ_{i−1})`, the coupled scheme's order.
    Previous,
    /// `M(G_{i−1}, (K_τ∇y)_{i−1}, μ_i)`.
    Current,
}

/// Nodal field averaged onto tet quadrature points.
pub fn nodal_to_qp(mesh: &Mesh, nodal: &[f64]) -> Vec<f64> {
    mesh.tets
        .iter()
        .map(|tet| 0.25 * (nodal[tet[0]] + nodal[tet[1]] + nodal[tet[2]] + nodal[tet[3]]))
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Coupled growth–nutrient run from `y⁰ = id`.
pub fn run_coupled(model: &MorphoModel, nutrient: &NutrientProblem, order: MuOrder) -> Result<Trajectory> {
    let mut traj = empty_trajectory(model);
    run_coupled_into(model, nutrient, order, &mut traj)?;
    Ok(traj)
}

pub fn run_coupled_into(model: &MorphoModel, nutrient: &NutrientProblem, order: MuOrder, traj: &mut Trajectory) -> Result<()> {
    model.grid.check_step(&model.rate)?;
    let mesh = &model.mesh;
    let tau = model.grid.tau();
    let solver = NutrientSolver::new(mesh, nutrient.nu, tau)?;
    let kappa = match model.kernel.time {
        k @ (TimeKernel::Relaxation { .. } | TimeKernel::Constant(_)) => k.samples(&model.grid),
    };

    let mut stepper = Stepper::new(model);
    let mut first = stepper.initial(DeformationField::identity(mesh)).map_err(|e| e.at_step(0))?;
    let mu0: Vec<f64> = mesh.vertices.iter().map(|&x| nutrient.initial.eval(0.0, x)).collect();
    first.diag.min_mu = Some(mu0.iter().copied().fold(f64::INFINITY, f64::min));
    first.diag.max_mu = Some(mu0.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    first.mu = Some(mu0.clone());
    traj.delta = first.g.min_det();
    traj.records.clear();
    traj.records.push(first);

    let mut mu_bound = inf_norm(&mu0);
    for i in 1..=model.grid.steps {
        let prev = traj.records.last().unwrap();
        let mu_prev = prev.mu.clone().expect("coupled records carry μ");

        let nutrient_step = || -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
            let ys: Vec<&DeformationField> = traj.records.iter().map(|r| &r.y).collect();
            let conv_y = kappa_conv_y(&ys, &kappa, tau, i);
            let h = nutrient.source.step_average(mesh, tau, i);
            let mu_d = nutrient.boundary.step_average(mesh, tau, i);
            let f = nutrient_rhs(&mu_prev, &h, &conv_y, &nutrient.consumption, tau);
            let (mu, _) = solver.solve(&f, &mu_d, &mu_prev)?;
            Ok((mu, h, mu_d))
        };
        let (mu_i, h, mu_d) = nutrient_step().map_err(|e| e.at_step(i))?;

        let feed = match order {
            MuOrder::Previous => nodal_to_qp(mesh, &mu_prev),
            MuOrder::Current => nodal_to_qp(mesh, &mu_i),
        };
        let mut rec = stepper.step(prev, i, Some(&feed), traj.delta).map_err(|e| e.at_step(i))?;

        // ‖μ_i‖∞ ≤ max(‖μ_{i−1}‖∞ + τ(‖h_i‖∞ + sup|H|), ‖μ_{D,i}‖∞)
        let boundary_max = mesh
            .boundary_node
            .iter()
            .zip(&mu_d)
            .filter(|(b, _)| **b)
            .fold(0.0_f64, |m, (_, v)| m.max(v.abs()));
        mu_bound = (mu_bound + tau * (inf_norm(&h) + nutrient.consumption.sup_bound())).max(boundary_max);
        let mu_norm = inf_norm(&mu_i);
        if model.check_invariants && mu_norm > mu_bound * (1.0 + 1e-9) + BOUND_SLACK {
            return Err(Error::Invariant(format!(
                "‖μ_{i}‖∞ = {mu_norm} exceeds the discrete stability bound {mu_bound}"
            ))
            .at_step(i));
        }
        rec.diag.min_mu = Some(mu_i.iter().copied().fold(f64::INFINITY, f64::min));
        rec.diag.max_mu = Some(mu_i.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        rec.mu = Some(mu_i);
        traj.records.push(rec);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growth::{run_morpho, GrowthRate, TimeGrid};
    use crate::linalg::dense_solve;

    #[test]
    fn kappa_convolution_sums() {
        let mesh = Mesh::unit_cube(1).unwrap();
        let y = DeformationField::identity(&mesh);
        let hist = vec![&y; 4];
        let zero = kappa_conv_y(&hist, &[0.0; 4], 0.1, 3);
        assert!(zero.iter().flatten().all(|&v| v == 0.0));
        let one = kappa_conv_y(&hist, &[0.5, 9.0], 0.2, 1);
        assert_eq!(one[7], [0.1 * 1.0, 0.1 * 1.0, 0.1 * 1.0]);
        let tau = 0.25;
        let c = kappa_conv_y(&hist, &[1.0; 4], tau, 4);
        for (v, x) in mesh.vertices.iter().enumerate() {
            for k in 0..3 {
                assert!((c[v][k] - 4.0 * tau * x[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn kuhn_stiffness_is_an_m_matrix() {
        let mesh = Mesh::unit_cube(3).unwrap();
        let (k, mass) = assemble_stiffness_and_mass(&mesh);
        for r in 0..k.n {
            let mut sum = 0.0;
            for (c, v) in k.row(r) {
                sum += v;
                if c != r {
                    assert!(v <= 1e-14, "K[{r},{c}] = {v}");
                }
            }
            assert!(sum.abs() < 1e-13);
        }
        assert!((mass.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_state_is_reproduced_exactly() {
        let mesh = Mesh::unit_cube(3).unwrap();
        let m_bar = 0.75;
        let cons = Consumption {
            h_c: 0.4,
            x_c: [0.5, 0.5, 0.5],
        };
        let conv = vec![[0.3, 0.2, 0.1]; mesh.num_nodes()];
        let h = vec![cons.eval([0.3, 0.2, 0.1]); mesh.num_nodes()];
        let mu_prev = vec![m_bar; mesh.num_nodes()];
        let mu = nutrient_step(&mu_prev, &h, &conv, &cons, &mu_prev, 0.7, 0.1, &mesh).unwrap();
        for v in mu {
            assert!((v - m_bar).abs() <= 2.0 * f64::EPSILON * m_bar);
        }
    }

    #[test]
    fn positive_source_keeps_interior_positive() {
        let mesh = Mesh::unit_cube(4).unwrap();
        let n = mesh.num_nodes();
        let mu = nutrient_step(&vec![0.0; n], &vec![50.0; n], &vec![[0.0; 3]; n], &Consumption::zero(), &vec![0.0; n], 1.0, 0.05, &mesh)
            .unwrap();
        for v in 0..n {
            if mesh.boundary_node[v] {
                assert_eq!(mu[v], 0.0);
            } else {
                assert!(mu[v] > 0.0);
            }
        }
    }

    fn dense_system(mesh: &Mesh, nu: f64, tau: f64, f: &[f64], mu_d: &[f64]) -> Vec<f64> {
        let (k, mass) = assemble_stiffness_and_mass(mesh);
        let interior: Vec<usize> = (0..mesh.num_nodes()).filter(|&v| !mesh.boundary_node[v]).collect();
        let a: Vec<Vec<f64>> = interior
            .iter()
            .map(|&r| interior.iter().map(|&c| nu * tau * k.get(r, c) + if r == c { mass[r] } else { 0.0 }).collect())
            .collect();
        let b: Vec<f64> = interior
            .iter()
            .map(|&r| {
                mass[r] * f[r]
                    - (0..mesh.num_nodes())
                        .filter(|&c| mesh.boundary_node[c])
                        .map(|c| nu * tau * k.get(r, c) * mu_d[c])
                        .sum::<f64>()
            })
            .collect();
        let x = dense_solve(a, b).unwrap();
        let mut mu = mu_d.to_vec();
        for (p, &v) in interior.iter().enumerate() {
            mu[v] = x[p];
        }
        mu
    }

    #[test]
    fn large_diffusivity_approaches_harmonic_extension() {
        let mesh = Mesh::unit_cube(4).unwrap();
        let n = mesh.num_nodes();
        let mu_d: Vec<f64> = mesh.vertices.iter().map(|x| x[0] * x[0] - x[1] * x[1] + 0.5 * x[2]).collect();
        let f: Vec<f64> = mesh.vertices.iter().map(|x| 1.0 + x[1]).collect();
        let tau = 0.1;
        // harmonic extension: the pure stiffness solve
        let (k, _) = assemble_stiffness_and_mass(&mesh);
        let interior: Vec<usize> = (0..n).filter(|&v| !mesh.boundary_node[v]).collect();
        let a: Vec<Vec<f64>> = interior.iter().map(|&r| interior.iter().map(|&c| k.get(r, c)).collect()).collect();
        let b: Vec<f64> = interior
            .iter()
            .map(|&r| -(0..n).filter(|&c| mesh.boundary_node[c]).map(|c| k.get(r, c) * mu_d[c]).sum::<f64>())
            .collect();
        let xh = dense_solve(a, b).unwrap();
        let mut harmonic = mu_d.clone();
        for (p, &v) in interior.iter().enumerate() {
            harmonic[v] = xh[p];
        }
        let mut dists = Vec::new();
        for nu in [1e2, 1e4] {
            let solver = NutrientSolver::new(&mesh, nu, tau).unwrap();
            let (mu, _) = solver.solve(&f, &mu_d, &vec![0.0; n]).unwrap();
            let direct = dense_system(&mesh, nu, tau, &f, &mu_d);
            for v in 0..n {
                assert!((mu[v] - direct[v]).abs() < 1e-9);
            }
            dists.push(mu.iter().zip(&harmonic).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        // the source correction decays like 1/ν
        assert!(dists[1] < 1e-3);
        assert!((dists[0] / dists[1] - 100.0).abs() < 1.0, "{dists:?}");
    }

    fn coupled_model() -> MorphoModel {
        let mut model = MorphoModel::new(Mesh::unit_cube(2).unwrap());
        model.grid = TimeGrid::new(0.5, 4);
        model.load.traction = [0.2, 0.0, 0.0];
        model
    }

    fn rich_problem() -> NutrientProblem {
        NutrientProblem {
            nu: 0.5,
            source: ScalarField::new(|t, x| 1.0 + t * x[1]),
            consumption: Consumption {
                h_c: 0.5,
                x_c: [0.5, 0.5, 0.5],
            },
            boundary: ScalarField::constant(1.0),
            initial: ScalarField::constant(1.0),
        }
    }

    #[test]
    fn decoupled_rate_matches_mechanical_run_bitwise() {
        let model = coupled_model();
        let plain = run_morpho(&model).unwrap();
        let coupled = run_coupled(&model, &rich_problem(), MuOrder::Previous).unwrap();
        for (a, b) in plain.records.iter().zip(&coupled.records) {
            assert_eq!(a.y, b.y);
            assert_eq!(a.g, b.g);
        }
    }

    #[test]
    fn zero_data_keeps_nutrient_zero() {
        let mut model = coupled_model();
        model.rate.alpha3 = 0.5;
        let traj = run_coupled(&model, &NutrientProblem::new(1.0), MuOrder::Previous).unwrap();
        for r in &traj.records {
            assert!(r.mu.as_ref().unwrap().iter().all(|&m| m == 0.0));
        }
    }

    #[test]
    fn starved_growth_lags_rich_growth() {
        let mut model = coupled_model();
        model.rate = GrowthRate {
            alpha0: 0.0,
            alpha1: 0.0,
            alpha2: 0.2,
            alpha3: 0.6,
            rho: 1.0,
        };
        let rich = run_coupled(&model, &rich_problem(), MuOrder::Previous).unwrap();
        let mut starved = rich_problem();
        starved.consumption.h_c = 20.0;
        starved.boundary = ScalarField::constant(-1.0);
        starved.initial = ScalarField::constant(-1.0);
        let poor = run_coupled(&model, &starved, MuOrder::Previous).unwrap();
        let sign = model.rate.mu_sensitivity_sign();
        for (a, b) in rich.last().g.0.iter().zip(&poor.last().g.0) {
            assert!(sign * (a.det - b.det) > 0.0);
        }
    }

    #[test]
    fn growth_update_uses_previous_nutrient() {
        let mut model = coupled_model();
        model.rate.alpha3 = 0.8;
        let problem = NutrientProblem {
            boundary: ScalarField::new(|t, _| 4.0 * t),
            ..rich_problem()
        };
        let prev = run_coupled(&model, &problem, MuOrder::Previous).unwrap();
        let curr = run_coupled(&model, &problem, MuOrder::Current).unwrap();
        assert_ne!(prev.records[1].g, curr.records[1].g);
        // Step 1 with the previous order sees μ⁰ only.
        let mut stepper = Stepper::new(&model);
        let first = stepper.initial(DeformationField::identity(&model.mesh)).unwrap();
        let mu0 = nodal_to_qp(&model.mesh, prev.records[0].mu.as_ref().unwrap());
        let rec = stepper.step(&first, 1, Some(&mu0), first.g.min_det()).unwrap();
        assert_eq!(rec.g, prev.records[1].g);
    }
}
