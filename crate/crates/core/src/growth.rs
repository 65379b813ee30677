//! Growth-tensor dynamics: the bounded rate `M`, the discrete space–time
//! convolution `K_τ∇y`, the exponential update and the stepping loop.

use std::f64::consts::{LN_2, PI};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{grad_at_qp, DeformationField, ElasticProblem, GrowthField, Load};
use crate::hyperelastic::{EnergyDensity, GrowthTensorPoint};
use crate::mesh::Mesh;
use crate::minimize::{minimize_energy, MinimizeOptions};
use crate::tensor::{mat_exp, vnorm, vsub, Mat3, Vec3};
use crate::tolerances::{BOUND_SLACK, DET_IDENTITY_REL};

/// Saturated growth-rate family
///
/// ```text
/// M(G, H, μ) = sat_ρ(α₀ Id + α₁ sym(H) + α₂ (Id − G) + α₃ tanh(μ) Id),
/// sat_ρ(X) = X / √(1 + |X|²/ρ²).
/// ```
///
/// `|M| < ρ` everywhere and `M` is Lipschitz with constant
/// `|α₁| + |α₂| + √3 |α₃|` (the saturation is 1-Lipschitz).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthRate {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub rho: f64,
}

impl Default for GrowthRate {
    fn default() -> Self {
        GrowthRate {
            alpha0: 0.0,
            alpha1: 0.5,
            alpha2: 1.0,
            alpha3: 0.0,
            rho: 1.0,
        }
    }
}

impl GrowthRate {
    pub fn zero() -> Self {
        GrowthRate {
            alpha0: 0.0,
            alpha1: 0.0,
            alpha2: 0.0,
            alpha3: 0.0,
            rho: 1.0,
        }
    }

    /// Rate that is the constant `sat_ρ(m Id)`.
    pub fn uniform(m: f64, rho: f64) -> Self {
        GrowthRate {
            alpha0: m,
            rho,
            ..Self::zero()
        }
    }

    /// `‖M‖_{L∞}` bound.
    pub fn m_bound(&self) -> f64 {
        self.rho
    }

    pub fn lip_bound(&self) -> f64 {
        self.alpha1.abs() + self.alpha2.abs() + 3f64.sqrt() * self.alpha3.abs()
    }

    /// Largest admissible step `(log 2)/‖M‖_{L∞}`.
    pub fn tau_star(&self) -> f64 {
        LN_2 / self.m_bound()
    }

    pub fn eval(&self, g: &Mat3, h: &Mat3, mu: Option<f64>) -> Mat3 {
        let mut x = h.sym() * self.alpha1 + (Mat3::IDENTITY - *g) * self.alpha2;
        let mut diag = self.alpha0;
        if let Some(mu) = mu {
            let s = self.alpha3 * mu.tanh();
            if s != 0.0 {
                diag += s;
            }
        }
        if diag != 0.0 {
            for k in 0..3 {
                x[(k, k)] += diag;
            }
        }
        saturate(&x, self.rho)
    }

    /// `∂M/∂μ` sign on the identity direction: the sign of α₃.
    pub fn mu_sensitivity_sign(&self) -> f64 {
        if self.alpha3 == 0.0 {
            0.0
        } else {
            self.alpha3.signum()
        }
    }
}

pub fn saturate(x: &Mat3, rho: f64) -> Mat3 {
    *x * (1.0 / (1.0 + x.norm_sq() / (rho * rho)).sqrt())
}

/// Unit-mass C¹ bump `φ(x) = c (1 − |x|²/r²)²` on `|x| < r`, optionally
/// rescaled by `weight`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mollifier {
    pub radius: f64,
    pub weight: f64,
}

impl Mollifier {
    pub fn new(radius: f64) -> Self {
        Mollifier { radius, weight: 1.0 }
    }

    pub fn zero(radius: f64) -> Self {
        Mollifier { radius, weight: 0.0 }
    }

    fn normalization(&self) -> f64 {
        105.0 / (32.0 * PI * self.radius.powi(3))
    }

    pub fn eval(&self, x: Vec3) -> f64 {
        let q = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (self.radius * self.radius);
        if q >= 1.0 {
            return 0.0;
        }
        let b = 1.0 - q;
        self.weight * self.normalization() * b * b
    }

    /// `∫_{ℝ³} φ`.
    pub fn integral(&self) -> f64 {
        self.weight
    }
}

/// Scalar time kernel `κ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeKernel {
    /// `κ(t) = e^{−t/t_rel}/t_rel`.
    Relaxation { t_rel: f64 },
    Constant(f64),
}

impl TimeKernel {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeKernel::Relaxation { t_rel } => (-t / t_rel).exp() / t_rel,
            TimeKernel::Constant(c) => c,
        }
    }

    /// Samples `κ_j = κ(t_j)`, `j = 0..=n`.
    pub fn samples(&self, grid: &TimeGrid) -> Vec<f64> {
        (0..=grid.steps).map(|j| self.eval(grid.t(j))).collect()
    }
}

/// Space–time convolution kernel `κ(t−s) φ(x−z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvolutionKernel {
    pub time: TimeKernel,
    pub space: Mollifier,
}

impl Default for ConvolutionKernel {
    fn default() -> Self {
        ConvolutionKernel {
            time: TimeKernel::Relaxation { t_rel: 0.25 },
            space: Mollifier::new(0.4),
        }
    }
}

/// Precomputed quadrature weights of `φ ⋆ ·` between tet centroids.
#[derive(Clone, Debug)]
pub struct SpatialConvolution {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SpatialConvolution {
    pub fn new(mesh: &Mesh, phi: &Mollifier) -> Self {
        let rows = mesh
            .quad_points
            .par_iter()
            .map(|&xq| weights_at(mesh, phi, xq))
            .collect();
        SpatialConvolution { rows }
    }

    /// `(φ⋆field)(x_q) = Σ_T |T| φ(x_q − x_T) field_T` at every quadrature point.
    pub fn apply(&self, field: &[Mat3]) -> Vec<Mat3> {
        self.rows
            .par_iter()
            .map(|row| {
                let mut acc = Mat3::ZERO;
                for &(t, w) in row {
                    acc += field[t] * w;
                }
                acc
            })
            .collect()
    }
}

fn weights_at(mesh: &Mesh, phi: &Mollifier, x: Vec3) -> Vec<(usize, f64)> {
    mesh.quad_points
        .iter()
        .enumerate()
        .filter_map(|(t, &xt)| {
            let d = vsub(x, xt);
            if vnorm(d) >= phi.radius {
                return None;
            }
            let w = mesh.volumes[t] * phi.eval(d);
            (w != 0.0).then_some((t, w))
        })
        .collect()
}

/// Mollified field at an arbitrary point; tets outside Ω contribute nothing.
pub fn spatial_mollify_at(x: Vec3, field: &[Mat3], mesh: &Mesh, phi: &Mollifier) -> Mat3 {
    let mut acc = Mat3::ZERO;
    for (t, w) in weights_at(mesh, phi, x) {
        acc += field[t] * w;
    }
    acc
}

pub fn spatial_mollify(field: &[Mat3], phi: &Mollifier, mesh: &Mesh) -> Vec<Mat3> {
    SpatialConvolution::new(mesh, phi).apply(field)
}

/// `(K_τ∇y)_{i−1} = Σ_{j=0}^{i−1} τ κ_j (φ⋆∇y)_{i−1−j}`; `history[j]` holds
/// step `j`, and at least `i` entries are required.
pub fn time_conv_step(history: &[Vec<Mat3>], kappa: &[f64], tau: f64, i: usize) -> Vec<Mat3> {
    assert!(i >= 1 && history.len() >= i && kappa.len() >= i);
    let nq = history[0].len();
    (0..nq)
        .into_par_iter()
        .map(|q| {
            let mut acc = Mat3::ZERO;
            for j in 0..i {
                acc += history[i - 1 - j][q] * (tau * kappa[j]);
            }
            acc
        })
        .collect()
}

/// `G_i = exp(τ M) G_{i−1}` per quadrature point. Also returns `max τ|M|`.
pub fn exp_update(g_prev: &GrowthField, m_vals: &[Mat3], tau: f64) -> Result<(GrowthField, f64)> {
    let next: Result<Vec<GrowthTensorPoint>> = g_prev
        .0
        .par_iter()
        .zip(m_vals.par_iter())
        .map(|(gp, m)| {
            if *m == Mat3::ZERO {
                return Ok(*gp);
            }
            GrowthTensorPoint::new(mat_exp(&(*m * tau)) * gp.g)
        })
        .collect();
    let max_tm = m_vals.iter().map(|m| tau * m.norm()).fold(0.0, f64::max);
    Ok((GrowthField(next?), max_tm))
}

/// Uniform partition `t_i = iτ`, `τ = T/N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Self {
        TimeGrid { t_final, steps }
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.tau()
    }

    pub fn refined(&self) -> Self {
        TimeGrid::new(self.t_final, 2 * self.steps)
    }

    pub fn check_step(&self, rate: &GrowthRate) -> Result<()> {
        let tau_star = rate.tau_star();
        if !(self.tau() < tau_star) {
            return Err(Error::Config(vec![crate::error::ConfigIssue {
                line: None,
                message: tau_star_message(self.tau(), tau_star),
            }]));
        }
        Ok(())
    }
}

pub fn tau_star_message(tau: f64, tau_star: f64) -> String {
    format!("time step τ = {tau} violates τ < τ* = (log 2)/‖M‖ = {tau_star}")
}

/// Time profile of the mechanical load.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LoadProfile {
    Constant,
    /// Scales linearly from 0 at t = 0 to 1 at t = T.
    Ramp,
    /// Scales by `sin(π t / T)`.
    Sine,
}

/// Spatially uniform body force and Neumann traction with a time profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadSpec {
    pub body: Vec3,
    pub traction: Vec3,
    pub profile: LoadProfile,
}

impl Default for LoadSpec {
    fn default() -> Self {
        LoadSpec {
            body: [0.0; 3],
            traction: [0.0; 3],
            profile: LoadProfile::Constant,
        }
    }
}

impl LoadSpec {
    pub fn factor(&self, t: f64, t_final: f64) -> f64 {
        match self.profile {
            LoadProfile::Constant => 1.0,
            LoadProfile::Ramp => t / t_final,
            LoadProfile::Sine => (PI * t / t_final).sin(),
        }
    }

    /// `ℓ_i = ℓ(t_i)`.
    pub fn sample(&self, mesh: &Mesh, t: f64, t_final: f64) -> Load {
        let s = self.factor(t, t_final);
        Load::uniform(
            mesh,
            [self.body[0] * s, self.body[1] * s, self.body[2] * s],
            [self.traction[0] * s, self.traction[1] * s, self.traction[2] * s],
        )
    }
}

/// Everything needed to run the mechanical scheme.
#[derive(Clone, Debug)]
pub struct MorphoModel {
    pub mesh: Mesh,
    pub density: EnergyDensity,
    pub rate: GrowthRate,
    pub kernel: ConvolutionKernel,
    pub load: LoadSpec,
    pub grid: TimeGrid,
    /// Initial growth tensor G⁰ (uniform).
    pub g0: Mat3,
    pub minimizer: MinimizeOptions,
    /// Minimize the energy once at t = 0 before stepping.
    pub equilibrate_initial: bool,
    pub check_invariants: bool,
}

impl MorphoModel {
    pub fn new(mesh: Mesh) -> Self {
        MorphoModel {
            mesh,
            density: EnergyDensity::default(),
            rate: GrowthRate::default(),
            kernel: ConvolutionKernel::default(),
            load: LoadSpec::default(),
            grid: TimeGrid::new(1.0, 16),
            g0: Mat3::IDENTITY,
            minimizer: MinimizeOptions::default(),
            equilibrate_initial: true,
            check_invariants: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    pub energy: f64,
    pub min_det_g: f64,
    pub max_norm_g: f64,
    /// `max_q |G_i − G_{i−1}| / τ`.
    pub max_step_rate: f64,
    pub min_mu: Option<f64>,
    pub max_mu: Option<f64>,
    pub minimizer_iterations: usize,
    /// `max_q |det G_i − e^{τ tr M} det G_{i−1}| / det G_{i−1}`.
    pub det_identity_err: f64,
    /// `max_q τ|M|`.
    pub max_tau_m: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub y: DeformationField,
    pub g: GrowthField,
    /// `(K_τ∇y)_{i−1}` used to build this step (zero at step 0).
    pub k_grad: Vec<Mat3>,
    /// Rate values used to build this step (zero at step 0).
    pub m_vals: Vec<Mat3>,
    /// Nodal nutrient values, when coupled.
    pub mu: Option<Vec<f64>>,
    pub diag: StepDiagnostics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// `records[i]` is step `i`; `records[0]` is the initial state.
    pub records: Vec<StepRecord>,
    /// `min det G⁰`, the nondegeneracy constant δ.
    pub delta: f64,
    pub m_bound: f64,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn tau(&self) -> f64 {
        self.grid.tau()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("trajectory holds the initial state")
    }

    /// Step index and affine weight for time `t`: `t ∈ ((i−1)τ, iτ]`.
    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.records.len() - 1;
        if t <= 0.0 || n == 0 {
            return (0, 1.0);
        }
        let tau = self.tau();
        let i = ((t / tau).ceil() as usize).clamp(1, n);
        let alpha = ((t - (i - 1) as f64 * tau) / tau).clamp(0.0, 1.0);
        (i, alpha)
    }

    /// Piecewise-affine interpolant `Ĝ_τ(t)`.
    pub fn g_hat(&self, t: f64) -> Vec<Mat3> {
        let (i, alpha) = self.locate(t);
        if i == 0 {
            return self.records[0].g.tensors();
        }
        let a = &self.records[i].g.0;
        let b = &self.records[i - 1].g.0;
        a.iter().zip(b).map(|(gi, gp)| gi.g * alpha + gp.g * (1.0 - alpha)).collect()
    }

    /// Backward piecewise-constant interpolant `Ḡ_τ(t)`.
    pub fn g_bar(&self, t: f64) -> Vec<Mat3> {
        let (i, _) = self.locate(t);
        self.records[i].g.tensors()
    }

    /// Time derivative `Ĝ'_τ(t)`; zero at `t = 0`.
    pub fn g_hat_rate(&self, t: f64) -> Vec<Mat3> {
        let (i, _) = self.locate(t);
        if i == 0 {
            return vec![Mat3::ZERO; self.records[0].g.0.len()];
        }
        let tau = self.tau();
        self.records[i]
            .g
            .0
            .iter()
            .zip(&self.records[i - 1].g.0)
            .map(|(a, b)| (a.g - b.g) * (1.0 / tau))
            .collect()
    }

    /// Piecewise-affine interpolant of the nodal deformation.
    pub fn y_hat(&self, t: f64) -> DeformationField {
        let (i, alpha) = self.locate(t);
        if i == 0 {
            return self.records[0].y.clone();
        }
        let a = &self.records[i].y.0;
        let b = &self.records[i - 1].y.0;
        DeformationField(
            a.iter()
                .zip(b)
                .map(|(p, q)| [0, 1, 2].map(|c| alpha * p[c] + (1.0 - alpha) * q[c]))
                .collect(),
        )
    }

    pub fn y_bar(&self, t: f64) -> DeformationField {
        let (i, _) = self.locate(t);
        self.records[i].y.clone()
    }

    /// `‖Ĝ_τ‖_{W^{1,∞}(0,T;L^∞)}` with the Frobenius norm pointwise.
    pub fn g_w1inf_norm(&self) -> f64 {
        let sup = self
            .records
            .iter()
            .flat_map(|r| r.g.0.iter().map(|p| p.g.norm()))
            .fold(0.0, f64::max);
        let rate = self.records.iter().skip(1).map(|r| r.diag.max_step_rate).fold(0.0, f64::max);
        sup + rate
    }

    /// Discrete Gronwall bound for `‖Ĝ_τ‖_{W^{1,∞}(0,T;L^∞)}`:
    /// `|G_i| ≤ e^{ρ t_i}|G⁰|` and `|G_i − G_{i−1}| ≤ (e^{τρ}−1)|G_{i−1}|`.
    pub fn g_w1inf_bound(&self) -> f64 {
        let g0 = self.records[0].g.0.iter().map(|p| p.g.norm()).fold(0.0, f64::max);
        let rho = self.m_bound;
        let tau = self.tau();
        let growth = (rho * self.grid.t_final).exp() * g0;
        growth + (tau * rho).exp_m1() / tau * growth
    }
}

/// Rolling state of the scheme between steps.
pub struct Stepper<'m> {
    pub model: &'m MorphoModel,
    conv: SpatialConvolution,
    kappa: Vec<f64>,
    /// `φ⋆∇y_j` for every completed step.
    mollified: Vec<Vec<Mat3>>,
    load_t0: Load,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m MorphoModel) -> Self {
        Stepper {
            model,
            conv: SpatialConvolution::new(&model.mesh, &model.kernel.space),
            kappa: model.kernel.time.samples(&model.grid),
            mollified: Vec::new(),
            load_t0: model.load.sample(&model.mesh, 0.0, model.grid.t_final),
        }
    }

    /// Builds step 0 from `(y⁰, G⁰)`.
    pub fn initial(&mut self, y0: DeformationField) -> Result<StepRecord> {
        let model = self.model;
        let mesh = &model.mesh;
        let g = GrowthField::uniform(mesh, model.g0)?;
        let problem = ElasticProblem::new(mesh, &model.density, &g, &self.load_t0);
        let (y, energy, iters) = if model.equilibrate_initial {
            let (y, rep) = minimize_energy(&problem, &y0, &model.minimizer)?;
            (y, rep.energy, rep.iterations)
        } else {
            let e = problem.total_energy(&y0).finite().ok_or_else(|| {
                Error::Degenerate("initial deformation has infinite energy".into())
            })?;
            (y0, e, 0)
        };
        self.mollified.clear();
        self.mollified.push(self.conv.apply(&grad_at_qp(&y, mesh)));
        let nq = mesh.num_tets();
        let diag = StepDiagnostics {
            energy,
            min_det_g: g.min_det(),
            max_norm_g: g.0.iter().map(|p| p.g.norm()).fold(0.0, f64::max),
            minimizer_iterations: iters,
            ..Default::default()
        };
        Ok(StepRecord {
            y,
            g,
            k_grad: vec![Mat3::ZERO; nq],
            m_vals: vec![Mat3::ZERO; nq],
            mu: None,
            diag,
        })
    }

    /// `(K_τ∇y)_{i−1}` from the stored history.
    pub fn k_grad(&self, i: usize) -> Vec<Mat3> {
        time_conv_step(&self.mollified, &self.kappa, self.model.grid.tau(), i)
    }

    /// One step of the scheme: `G_i` from `G_{i−1}` and `(K_τ∇y)_{i−1}`, then
    /// `y_i` by minimization warm-started at `y_{i−1}`. `mu_qp`, when given,
    /// is the nutrient value fed to the rate at each quadrature point.
    pub fn step(&mut self, prev: &StepRecord, i: usize, mu_qp: Option<&[f64]>, delta: f64) -> Result<StepRecord> {
        let model = self.model;
        let mesh = &model.mesh;
        let tau = model.grid.tau();
        assert_eq!(self.mollified.len(), i, "history must hold steps 0..i-1");

        let k_grad = self.k_grad(i);
        let m_vals: Vec<Mat3> = (0..mesh.num_tets())
            .into_par_iter()
            .map(|q| model.rate.eval(&prev.g.0[q].g, &k_grad[q], mu_qp.map(|m| m[q])))
            .collect();
        let (g, max_tau_m) = exp_update(&prev.g, &m_vals, tau)?;

        let load = model.load.sample(mesh, model.grid.t(i), model.grid.t_final);
        let problem = ElasticProblem::new(mesh, &model.density, &g, &load);
        let (y, rep) = minimize_energy(&problem, &prev.y, &model.minimizer)?;
        self.mollified.push(self.conv.apply(&grad_at_qp(&y, mesh)));

        let mut diag = StepDiagnostics {
            energy: rep.energy,
            minimizer_iterations: rep.iterations,
            max_tau_m,
            min_det_g: f64::INFINITY,
            ..Default::default()
        };
        let rho = model.rate.m_bound();
        let lower = (-3.0 * tau * i as f64 * rho).exp() * delta;
        let step_factor = (tau * rho).exp_m1();
        for q in 0..mesh.num_tets() {
            let (gi, gp) = (&g.0[q], &prev.g.0[q]);
            diag.min_det_g = diag.min_det_g.min(gi.det);
            diag.max_norm_g = diag.max_norm_g.max(gi.g.norm());
            let step = (gi.g - gp.g).norm();
            diag.max_step_rate = diag.max_step_rate.max(step / tau);
            let predicted = (tau * m_vals[q].trace()).exp() * gp.det;
            let err = (gi.det - predicted).abs() / gp.det;
            diag.det_identity_err = diag.det_identity_err.max(err);
            if model.check_invariants {
                if err > DET_IDENTITY_REL {
                    return Err(Error::Invariant(format!(
                        "qp {q}: det G_i deviates from e^(τ tr M) det G_(i-1) by {err:e} (relative)"
                    )));
                }
                if gi.det < lower * (1.0 - BOUND_SLACK) {
                    return Err(Error::Invariant(format!(
                        "qp {q}: det G_i = {} below e^(-3τ i ‖M‖) δ = {lower}",
                        gi.det
                    )));
                }
                if step > step_factor * gp.g.norm() * (1.0 + BOUND_SLACK) + f64::EPSILON {
                    return Err(Error::Invariant(format!(
                        "qp {q}: |G_i − G_(i-1)| = {step} exceeds (e^(τ‖M‖) − 1)|G_(i-1)|"
                    )));
                }
            }
        }
        Ok(StepRecord {
            y,
            g,
            k_grad,
            m_vals,
            mu: None,
            diag,
        })
    }
}

/// Runs the mechanical scheme, appending records to `traj` as steps
/// complete so a failed run still exposes every finished step.
pub fn run_morpho_into(model: &MorphoModel, y0: DeformationField, traj: &mut Trajectory) -> Result<()> {
    run_with_mu_into(model, y0, traj, |_| None)
}

/// Like [`run_morpho_into`], with `mu_at(i)` supplying the per-quadrature-point
/// nutrient value fed to the rate in step `i`.
pub fn run_with_mu_into<F>(model: &MorphoModel, y0: DeformationField, traj: &mut Trajectory, mut mu_at: F) -> Result<()>
where
    F: FnMut(usize) -> Option<Vec<f64>>,
{
    model.grid.check_step(&model.rate)?;
    let mut stepper = Stepper::new(model);
    let first = stepper.initial(y0).map_err(|e| e.at_step(0))?;
    traj.delta = first.g.min_det();
    traj.records.clear();
    traj.records.push(first);
    for i in 1..=model.grid.steps {
        let mu = mu_at(i);
        let mut rec = stepper
            .step(traj.records.last().unwrap(), i, mu.as_deref(), traj.delta)
            .map_err(|e| e.at_step(i))?;
        if let Some(mu) = &mu {
            rec.diag.min_mu = Some(mu.iter().copied().fold(f64::INFINITY, f64::min));
            rec.diag.max_mu = Some(mu.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        if rec.diag.max_tau_m > LN_2 {
            traj.warnings.push(format!("step {i}: τ·max|M| = {} exceeds log 2", rec.diag.max_tau_m));
        }
        traj.records.push(rec);
    }
    Ok(())
}

pub fn empty_trajectory(model: &MorphoModel) -> Trajectory {
    Trajectory {
        grid: model.grid,
        records: Vec::new(),
        delta: f64::NAN,
        m_bound: model.rate.m_bound(),
        warnings: Vec::new(),
    }
}

/// Full trajectory of the mechanical scheme starting from `y⁰ = id`.
pub fn run_morpho(model: &MorphoModel) -> Result<Trajectory> {
    let mut traj = empty_trajectory(model);
    run_morpho_into(model, DeformationField::identity(&model.mesh), &mut traj)?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, s: f64) -> Mat3 {
        let mut m = Mat3::ZERO;
        for v in m.0.iter_mut().flatten() {
            *v = rng.random_range(-s..s);
        }
        m
    }

    #[test]
    fn rate_is_bounded_and_lipschitz() {
        let rate = GrowthRate {
            alpha0: 0.3,
            alpha1: 1.5,
            alpha2: -2.0,
            alpha3: 0.7,
            rho: 0.8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let g = random_mat(&mut rng, 10.0);
            let h = random_mat(&mut rng, 10.0);
            let mu = rng.random_range(-10.0..10.0);
            assert!(rate.eval(&g, &h, Some(mu)).norm() <= rate.m_bound());
        }
        for _ in 0..1000 {
            let (g1, h1, m1) = (random_mat(&mut rng, 2.0), random_mat(&mut rng, 2.0), rng.random_range(-2.0..2.0));
            let (g2, h2, m2): (Mat3, Mat3, f64) = (
                g1 + random_mat(&mut rng, 0.01),
                h1 + random_mat(&mut rng, 0.01),
                m1 + rng.random_range(-0.01..0.01),
            );
            let dist = ((g1 - g2).norm_sq() + (h1 - h2).norm_sq() + (m1 - m2) * (m1 - m2)).sqrt();
            let dm = (rate.eval(&g1, &h1, Some(m1)) - rate.eval(&g2, &h2, Some(m2))).norm();
            assert!(dm <= rate.lip_bound() * 1.01 * dist);
        }
    }

    #[test]
    fn mollifier_has_unit_mass_and_compact_support() {
        let phi = Mollifier::new(0.3);
        // radial quadrature oracle
        let n = 20_000;
        let dr = phi.radius / n as f64;
        let mass: f64 = (0..n)
            .map(|k| {
                let r = (k as f64 + 0.5) * dr;
                4.0 * PI * r * r * phi.eval([r, 0.0, 0.0]) * dr
            })
            .sum();
        assert!((mass - 1.0).abs() < 1e-8);
        assert_eq!(phi.eval([0.3, 0.0, 0.0]), 0.0);
        assert_eq!(phi.eval([0.0, 0.2, 0.25]), 0.0);
    }

    #[test]
    fn mollified_constant_field_inside_domain() {
        let mesh = Mesh::unit_cube(4).unwrap();
        let phi = Mollifier::new(0.4);
        let c = Mat3([[1.0, 0.2, 0.0], [0.0, 0.9, -0.3], [0.1, 0.0, 1.1]]);
        let field = vec![c; mesh.num_tets()];
        let v = spatial_mollify_at([0.5, 0.5, 0.5], &field, &mesh, &phi);
        assert!((v - c).norm() <= 0.02 * c.norm(), "{v:?}");
    }

    #[test]
    fn mollify_degenerate_cases() {
        let mesh = Mesh::unit_cube(2).unwrap();
        let field = vec![Mat3::IDENTITY; mesh.num_tets()];
        let zero = spatial_mollify(&field, &Mollifier::zero(0.4), &mesh);
        assert!(zero.iter().all(|m| *m == Mat3::ZERO));
        let outside = spatial_mollify_at([1.5, 0.5, 0.5], &field, &mesh, &Mollifier::new(0.4));
        assert_eq!(outside, Mat3::ZERO);
    }

    #[test]
    fn time_convolution_sums() {
        let c = Mat3([[1.0, 2.0, 0.0], [0.0, 1.0, 0.0], [3.0, 0.0, 1.0]]);
        let hist = vec![vec![c; 3]; 5];
        let tau = 0.1;
        let ones = vec![1.0; 6];
        for i in 1..=5 {
            let k = time_conv_step(&hist, &ones, tau, i);
            assert!((k[0] - c * (i as f64 * tau)).max_abs() < 1e-14);
        }
        let k = time_conv_step(&hist, &[0.0; 6], tau, 4);
        assert!(k.iter().all(|m| *m == Mat3::ZERO));
        let h0 = vec![vec![c * 2.0; 3]];
        let k = time_conv_step(&h0, &[0.7], tau, 1);
        assert_eq!(k[1], c * 2.0 * (tau * 0.7));
    }

    #[test]
    fn exp_update_zero_rate_is_identity_map() {
        let g = GrowthField::from_tensors(vec![Mat3::from_diag([1.1, 0.9, 1.3]); 4]).unwrap();
        let (next, _) = exp_update(&g, &[Mat3::ZERO; 4], 0.2).unwrap();
        assert_eq!(next, g);
    }

    #[test]
    fn exp_update_scalar_rate_closed_form() {
        let m = 0.37;
        let tau = 0.05;
        let mut g = GrowthField::from_tensors(vec![Mat3::IDENTITY; 2]).unwrap();
        let rate = vec![Mat3::IDENTITY * m; 2];
        for _ in 0..20 {
            g = exp_update(&g, &rate, tau).unwrap().0;
        }
        let expected = (20.0 * tau * m).exp();
        assert!((g.0[0].g - Mat3::IDENTITY * expected).max_abs() < 1e-13);
    }

    #[test]
    fn exp_update_preserves_det_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rate = GrowthRate {
            alpha0: 0.1,
            alpha1: 1.0,
            alpha2: 0.5,
            alpha3: 0.0,
            rho: 1.0,
        };
        let tau = 0.5 * rate.tau_star();
        let gs: Vec<Mat3> = (0..50).map(|_| Mat3::IDENTITY + random_mat(&mut rng, 0.2)).collect();
        let g = GrowthField::from_tensors(gs).unwrap();
        let ms: Vec<Mat3> = g.0.iter().map(|p| rate.eval(&p.g, &random_mat(&mut rng, 2.0), None)).collect();
        let (next, max_tm) = exp_update(&g, &ms, tau).unwrap();
        assert!(max_tm <= LN_2);
        for q in 0..50 {
            let predicted = (tau * ms[q].trace()).exp() * g.0[q].det;
            assert!((next.0[q].det - predicted).abs() <= 1e-12 * g.0[q].det);
        }
    }

    #[test]
    fn worst_case_trace_respects_lower_bound() {
        // tr M = −√3 ρ is the most negative trace a bounded rate can reach;
        // saturate an extreme compression and check det G_i ≥ e^{−3τiρ} δ.
        let rate = GrowthRate::uniform(-1e6, 1.0);
        let tau = 0.9 * rate.tau_star();
        let mut g = GrowthField::from_tensors(vec![Mat3::IDENTITY * 0.5]).unwrap();
        let delta = g.min_det();
        for i in 1..=10 {
            let m = rate.eval(&g.0[0].g, &Mat3::ZERO, None);
            g = exp_update(&g, &[m], tau).unwrap().0;
            assert!(g.0[0].det >= (-3.0 * tau * i as f64 * rate.m_bound()).exp() * delta);
        }
    }

    #[test]
    fn grid_rejects_large_steps() {
        let rate = GrowthRate::default();
        assert!(TimeGrid::new(1.0, 1).check_step(&rate).is_err());
        assert!(TimeGrid::new(1.0, 2).check_step(&rate).is_ok());
    }

    fn small_model() -> MorphoModel {
        let mut model = MorphoModel::new(Mesh::unit_cube(2).unwrap());
        model.grid = TimeGrid::new(0.5, 4);
        model.load.traction = [0.3, 0.0, 0.0];
        model
    }

    #[test]
    fn frozen_dynamics_is_stationary() {
        let mut model = small_model();
        model.rate = GrowthRate::zero();
        let traj = run_morpho(&model).unwrap();
        let first = &traj.records[0];
        for rec in &traj.records[1..] {
            assert_eq!(rec.g, first.g);
            assert!(rec.y.max_dist(&first.y) <= 1e-8);
        }
    }

    #[test]
    fn uniform_rate_grows_determinant_exponentially() {
        let mut model = small_model();
        model.load = LoadSpec::default();
        model.rate = GrowthRate::uniform(0.2, 2.0);
        let m = model.rate.eval(&Mat3::IDENTITY, &Mat3::ZERO, None)[(0, 0)];
        let traj = run_morpho(&model).unwrap();
        let tau = model.grid.tau();
        for (i, rec) in traj.records.iter().enumerate() {
            let expected = (3.0 * tau * m * i as f64).exp();
            for p in &rec.g.0 {
                assert!((p.det - expected).abs() <= 1e-12 * expected);
            }
        }
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let model = small_model();
        let a = run_morpho(&model).unwrap();
        let b = run_morpho(&model).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_step_run_equals_one_step() {
        let mut model = small_model();
        model.grid = TimeGrid::new(0.125, 1);
        let traj = run_morpho(&model).unwrap();
        assert_eq!(traj.len(), 2);
        let mut stepper = Stepper::new(&model);
        let first = stepper.initial(DeformationField::identity(&model.mesh)).unwrap();
        let rec = stepper.step(&first, 1, None, first.g.min_det()).unwrap();
        assert_eq!(traj.records[1], rec);
    }

    #[test]
    fn interpolants_agree_at_nodes_and_gap_is_bounded() {
        let model = small_model();
        let traj = run_morpho(&model).unwrap();
        let tau = traj.tau();
        for i in 0..traj.len() {
            let t = i as f64 * tau;
            assert_eq!(traj.g_bar(t), traj.records[i].g.tensors());
            let hat = traj.g_hat(t);
            for (a, b) in hat.iter().zip(traj.records[i].g.tensors()) {
                assert!((*a - b).max_abs() <= 1e-15 * b.max_abs());
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let t = rng.random_range(0.0..model.grid.t_final);
            let (hat, bar, rate) = (traj.g_hat(t), traj.g_bar(t), traj.g_hat_rate(t));
            for q in 0..hat.len() {
                assert!((bar[q] - hat[q]).norm() <= tau * rate[q].norm() * (1.0 + 1e-12) + 1e-15);
            }
        }
        assert!(traj.g_w1inf_norm() <= traj.g_w1inf_bound());
    }
}
