//! Nutrient-driven solution operator and a derivative-free search over a
//! finite-dimensional family of controls.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::DeformationField;
use crate::growth::{empty_trajectory, run_with_mu_into, MorphoModel, TimeGrid, Trajectory};
use crate::mesh::Mesh;
use crate::nutrient::{MuOrder, ScalarField};
use crate::tensor::{vadd, vnorm, vscale, vsub, Vec3};

/// Named basis field `b_k(t, x)`.
#[derive(Clone, Debug)]
pub struct BasisField {
    pub id: String,
    pub field: ScalarField,
}

impl BasisField {
    /// Known ids: `const`, `t`, `x`, `y`, `z`, `sin_t` (`sin 2πt`), `cos_t`.
    pub fn from_id(id: &str) -> Option<Self> {
        let field = match id {
            "const" => ScalarField::constant(1.0),
            "t" => ScalarField::new(|t, _| t),
            "x" => ScalarField::new(|_, x| x[0]),
            "y" => ScalarField::new(|_, x| x[1]),
            "z" => ScalarField::new(|_, x| x[2]),
            "sin_t" => ScalarField::new(|t, _| (std::f64::consts::TAU * t).sin()),
            "cos_t" => ScalarField::new(|t, _| (std::f64::consts::TAU * t).cos()),
            _ => return None,
        };
        Some(BasisField { id: id.to_string(), field })
    }
}

pub const BASIS_IDS: [&str; 7] = ["const", "t", "x", "y", "z", "sin_t", "cos_t"];

#[derive(Clone, Debug)]
pub struct ControlFamily {
    pub basis: Vec<BasisField>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ControlFamily {
    pub fn new(basis: Vec<BasisField>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let bad = |m: String| Err(Error::Degenerate(m));
        if basis.is_empty() || lo.len() != basis.len() || hi.len() != basis.len() {
            return bad(format!(
                "control family needs one bound pair per basis field ({} fields, {} lo, {} hi)",
                basis.len(),
                lo.len(),
                hi.len()
            ));
        }
        for (k, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return bad(format!("control box coordinate {k}: [{l}, {h}] is not a bounded interval"));
            }
        }
        Ok(ControlFamily { basis, lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `μ_c = Σ c_k b_k`.
    pub fn control(&self, c: &[f64]) -> ScalarField {
        assert_eq!(c.len(), self.dim());
        let terms: Vec<(f64, ScalarField)> = c.iter().copied().zip(self.basis.iter().map(|b| b.field.clone())).collect();
        ScalarField::new(move |t, x| terms.iter().map(|(ck, b)| ck * b.eval(t, x)).sum())
    }

    pub fn contains(&self, c: &[f64]) -> bool {
        c.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| l <= v && v <= h)
    }
}

/// Interval averages `μ_i`, `i = 1..N`, at `points` (entry `i − 1` is step `i`).
pub fn control_average(mu: &ScalarField, grid: &TimeGrid, points: &[Vec3]) -> Vec<Vec<f64>> {
    (1..=grid.steps)
        .map(|i| points.iter().map(|&x| mu.interval_average(grid.t(i - 1), grid.t(i), x)).collect())
        .collect()
}

/// `S(μ)`: the mechanical scheme with the rate fed `μ_i` (`MuOrder::Current`)
/// or `μ_{i−1}` (`MuOrder::Previous`, with `μ_0 = μ(0, ·)`) at the quadrature
/// points. Records carry the nodal values of the same sequence.
pub fn solve_given_control(model: &MorphoModel, mu: &ScalarField, order: MuOrder) -> Result<Trajectory> {
    let mesh = &model.mesh;
    let grid = &model.grid;
    let at_t0 = |pts: &[Vec3]| pts.iter().map(|&x| mu.eval(0.0, x)).collect::<Vec<f64>>();
    let mut qp = vec![at_t0(&mesh.quad_points)];
    qp.extend(control_average(mu, grid, &mesh.quad_points));
    let mut nodal = vec![at_t0(&mesh.vertices)];
    nodal.extend(control_average(mu, grid, &mesh.vertices));

    let mut traj = empty_trajectory(model);
    let shift = match order {
        MuOrder::Current => 0,
        MuOrder::Previous => 1,
    };
    run_with_mu_into(model, DeformationField::identity(mesh), &mut traj, |i| Some(qp[i - shift].clone()))?;
    for (i, rec) in traj.records.iter_mut().enumerate() {
        rec.mu = Some(nodal[if i == 0 { 0 } else { i - shift }].clone());
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub p: f64,
    /// `y_target(t, x) = x + t·d`.
    pub target_disp: Vec3,
}

impl Objective {
    pub fn y_target(&self, t: f64, x: Vec3) -> Vec3 {
        vadd(x, vscale(self.target_disp, t))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JTerms {
    /// `Σ vol · det G_N`.
    pub growth: f64,
    /// `Σ_i τ Σ vol |y_i − y_target,i|^p`.
    pub tracking: f64,
    /// `Σ_i τ Σ vol |μ_i|^p`.
    pub effort: f64,
    pub total: f64,
}

/// `J` by one-point quadrature in space and the right-endpoint rule in time.
/// `mu_qp[i − 1]` holds `μ_i` at the quadrature points.
pub fn evaluate_j(traj: &Trajectory, mesh: &Mesh, mu_qp: &[Vec<f64>], obj: &Objective) -> JTerms {
    let tau = traj.tau();
    let last = traj.last();
    let growth: f64 = mesh.volumes.iter().zip(&last.g.0).map(|(v, g)| v * g.det).sum();
    let mut tracking = 0.0;
    let mut effort = 0.0;
    for (i, rec) in traj.records.iter().enumerate().skip(1) {
        let t = traj.grid.t(i);
        for (e, tet) in mesh.tets.iter().enumerate() {
            let mut y = [0.0; 3];
            for &v in tet {
                y = vadd(y, vscale(rec.y.0[v], 0.25));
            }
            let d = vnorm(vsub(y, obj.y_target(t, mesh.quad_points[e])));
            tracking += tau * mesh.volumes[e] * d.powf(obj.p);
            if let Some(mu) = mu_qp.get(i - 1) {
                effort += tau * mesh.volumes[e] * mu[e].abs().powf(obj.p);
            }
        }
    }
    let (growth, tracking, effort) = (obj.beta1 * growth, obj.beta2 * tracking, obj.beta3 * effort);
    JTerms {
        growth,
        tracking,
        effort,
        total: growth + tracking + effort,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SearchSpec {
    /// Tensor grid with the given number of points per coordinate.
    Grid(Vec<usize>),
    /// Compass search from the box center, at most `budget` forward solves.
    Pattern { budget: usize },
}

#[derive(Clone, Debug)]
pub struct Candidate {
    pub id: usize,
    pub coeffs: Vec<f64>,
    /// `None` when the forward solve failed; the message is in `error`.
    pub terms: Option<JTerms>,
    pub error: Option<String>,
}

impl Candidate {
    pub fn j(&self) -> f64 {
        self.terms.map_or(f64::INFINITY, |t| t.total)
    }
}

#[derive(Clone, Debug)]
pub struct ControlResult {
    pub best: usize,
    pub coeffs: Vec<f64>,
    pub terms: JTerms,
    pub trajectory: Trajectory,
    /// Every evaluated candidate, in evaluation order.
    pub candidates: Vec<Candidate>,
    pub budget_exhausted: bool,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// All points of the tensor grid, last coordinate fastest.
pub fn grid_points(family: &ControlFamily, levels: &[usize]) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = (0..family.dim()).map(|k| linspace(family.lo[k], family.hi[k], levels[k])).collect();
    let mut points = vec![Vec::new()];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points
}

struct Evaluator<'a> {
    model: &'a MorphoModel,
    family: &'a ControlFamily,
    obj: &'a Objective,
    order: MuOrder,
    candidates: Vec<Candidate>,
    best: Option<(usize, Trajectory)>,
}

impl Evaluator<'_> {
    fn eval_one(&self, c: &[f64]) -> Result<(JTerms, Trajectory)> {
        let mu = self.family.control(c);
        let traj = solve_given_control(self.model, &mu, self.order)?;
        let qp = control_average(&mu, &self.model.grid, &self.model.mesh.quad_points);
        Ok((evaluate_j(&traj, &self.model.mesh, &qp, self.obj), traj))
    }

    /// Evaluates a batch concurrently; results merged in batch order, ties
    /// broken toward the earliest candidate.
    fn eval_batch(&mut self, batch: Vec<Vec<f64>>) -> Vec<f64> {
        let results: Vec<_> = batch.par_iter().map(|c| self.eval_one(c)).collect();
        let mut js = Vec::with_capacity(batch.len());
        for (c, res) in batch.into_iter().zip(results) {
            let id = self.candidates.len();
            let cand = match res {
                Ok((terms, traj)) => {
                    let better = match &self.best {
                        None => true,
                        Some((b, _)) => terms.total < self.candidates[*b].j(),
                    };
                    if better {
                        self.best = Some((id, traj));
                    }
                    Candidate {
                        id,
                        coeffs: c,
                        terms: Some(terms),
                        error: None,
                    }
                }
                Err(e) => Candidate {
                    id,
                    coeffs: c,
                    terms: None,
                    error: Some(e.to_string()),
                },
            };
            js.push(cand.j());
            self.candidates.push(cand);
        }
        js
    }
}

/// Minimizes `J(S(μ_c))` over the family's box.
pub fn optimize_control(
    model: &MorphoModel,
    family: &ControlFamily,
    obj: &Objective,
    search: &SearchSpec,
    order: MuOrder,
) -> Result<ControlResult> {
    model.grid.check_step(&model.rate)?;
    let mut ev = Evaluator {
        model,
        family,
        obj,
        order,
        candidates: Vec::new(),
        best: None,
    };
    let mut budget_exhausted = false;
    match search {
        SearchSpec::Grid(levels) => {
            if levels.len() != family.dim() || levels.contains(&0) {
                return Err(Error::Degenerate(format!(
                    "grid needs a positive level count for each of the {} coordinates",
                    family.dim()
                )));
            }
            ev.eval_batch(grid_points(family, levels));
        }
        SearchSpec::Pattern { budget } => {
            budget_exhausted = pattern_search(&mut ev, *budget);
        }
    }
    let (best, trajectory) = ev.best.take().ok_or_else(|| {
        let first = ev.candidates.first().and_then(|c| c.error.clone()).unwrap_or_default();
        Error::Degenerate(format!("every control candidate failed; first failure: {first}"))
    })?;
    let cand = &ev.candidates[best];
    Ok(ControlResult {
        best,
        coeffs: cand.coeffs.clone(),
        terms: cand.terms.unwrap(),
        trajectory,
        candidates: ev.candidates,
        budget_exhausted,
    })
}

/// Compass search with step halving. Returns whether the budget ran out
/// before the step fell below `1e-3` of the box width.
fn pattern_search(ev: &mut Evaluator<'_>, budget: usize) -> bool {
    let fam = ev.family;
    let dim = fam.dim();
    let width: Vec<f64> = (0..dim).map(|k| fam.hi[k] - fam.lo[k]).collect();
    let mut step: Vec<f64> = width.iter().map(|w| 0.25 * w).collect();
    let mut seen: HashMap<Vec<u64>, f64> = HashMap::new();
    let key = |c: &[f64]| c.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();

    let mut center: Vec<f64> = (0..dim).map(|k| 0.5 * (fam.lo[k] + fam.hi[k])).collect();
    if budget == 0 {
        return true;
    }
    let j0 = ev.eval_batch(vec![center.clone()])[0];
    seen.insert(key(&center), j0);
    let mut j_center = j0;
    loop {
        if step.iter().zip(&width).all(|(s, w)| *s <= 1e-3 * w) {
            return false;
        }
        let mut batch = Vec::new();
        for k in 0..dim {
            for sgn in [-1.0, 1.0] {
                let mut c = center.clone();
                c[k] = (c[k] + sgn * step[k]).clamp(fam.lo[k], fam.hi[k]);
                if !seen.contains_key(&key(&c)) && !batch.contains(&c) {
                    batch.push(c);
                }
            }
        }
        let room = budget - ev.candidates.len();
        let truncated = batch.len() > room;
        batch.truncate(room);
        let js = ev.eval_batch(batch.clone());
        let mut improved = None;
        for (c, j) in batch.into_iter().zip(js) {
            seen.insert(key(&c), j);
            if j < j_center && improved.as_ref().is_none_or(|(_, bj)| j < *bj) {
                improved = Some((c, j));
            }
        }
        match improved {
            Some((c, j)) => {
                center = c;
                j_center = j;
            }
            None if truncated || ev.candidates.len() >= budget => return true,
            None => step.iter_mut().for_each(|s| *s *= 0.5),
        }
        if ev.candidates.len() >= budget {
            return true;
        }
    }
}
