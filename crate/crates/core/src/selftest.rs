//! Seeded invariant checks run by the `selftest` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fem::{DeformationField, ElasticProblem, GrowthField, Load};
use crate::growth::{run_morpho, GrowthRate, MorphoModel, TimeGrid};
use crate::hyperelastic::EnergyDensity;
use crate::mesh::Mesh;
use crate::nutrient::{nutrient_step, Consumption};
use crate::tensor::{mat_exp, Mat3};
use crate::tolerances::EXP_DET_REL;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries uniform in `[−s, s]`.
pub fn random_mat(rng: &mut impl Rng, s: f64) -> Mat3 {
    let mut m = Mat3::ZERO;
    for v in m.0.iter_mut().flatten() {
        *v = rng.random_range(-s..=s);
    }
    m
}

/// Uniformly distributed direction scaled to Frobenius norm `r`.
pub fn random_mat_with_norm(rng: &mut impl Rng, r: f64) -> Mat3 {
    loop {
        let m = random_mat(rng, 1.0);
        let n = m.norm();
        if n > 1e-3 {
            return m * (r / n);
        }
    }
}

pub fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    let w = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
    let k = Mat3([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]);
    mat_exp(&k)
}

/// `F` with positive determinant drawn from `[0.5, 2]`.
pub fn random_admissible(rng: &mut impl Rng) -> Mat3 {
    loop {
        let f = Mat3::IDENTITY + random_mat(rng, 0.6);
        let d = f.det();
        if d > 0.05 {
            let target: f64 = rng.random_range(0.5..=2.0);
            return f * (target / d).cbrt();
        }
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, limit: f64) -> Check {
    Check {
        name,
        passed: worst <= limit,
        detail: format!("worst {worst:e} (limit {limit:e})"),
    }
}

pub fn run_selftest(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    let mut bound = 0.0_f64;
    let mut det_rel = 0.0_f64;
    let mut inv = 0.0_f64;
    for _ in 0..2000 {
        let norm = r.random_range(0.0..=5.0);
        let a = random_mat_with_norm(&mut r, norm);
        let e = mat_exp(&a);
        bound = bound.max((e - Mat3::IDENTITY).norm() - (a.norm().exp() - 1.0) * (1.0 + 1e-14));
        det_rel = det_rel.max((e.det() - a.trace().exp()).abs() / a.trace().exp());
        inv = inv.max((e * mat_exp(&-a) - Mat3::IDENTITY).max_abs());
    }
    out.push(check("exp: |exp A − Id| ≤ e^|A| − 1", bound, 0.0));
    out.push(check("exp: det exp A = e^tr A", det_rel, EXP_DET_REL));
    out.push(check("exp: exp(A) exp(−A) = Id", inv, 1e-10));

    let w = EnergyDensity::default();
    let (c1, c2) = (w.c1(), w.c2());
    let mut coerc = f64::NEG_INFINITY;
    let mut mandel = f64::NEG_INFINITY;
    let mut frame = 0.0_f64;
    for _ in 0..2000 {
        let f = random_admissible(&mut r);
        let wf = w.w(&f).to_f64();
        coerc = coerc.max(c1 * f.norm().powf(w.p) - 1.0 / c1 - wf);
        mandel = mandel.max(w.mandel(&f).unwrap().norm() - c2 * (wf + 1.0));
        let rot = random_rotation(&mut r);
        frame = frame.max((w.w(&(rot * f)).to_f64() - wf).abs() / wf);
    }
    out.push(check("energy: coercivity", coerc, 0.0));
    out.push(check("energy: Mandel control", mandel, 0.0));
    out.push(check("energy: frame indifference", frame, 1e-12));

    let mut dw_err = 0.0_f64;
    for _ in 0..20 {
        let f = random_admissible(&mut r);
        let dw = w.dw(&f).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut fp = f;
                let mut fm = f;
                fp[(i, j)] += h;
                fm[(i, j)] -= h;
                let fd = (w.w(&fp).to_f64() - w.w(&fm).to_f64()) / (2.0 * h);
                dw_err = dw_err.max((fd - dw[(i, j)]).abs() / dw.norm());
            }
        }
    }
    out.push(check("energy: DW against finite differences", dw_err, 1e-6));

    let mesh = Mesh::unit_cube(2).unwrap();
    let mut grad_err = 0.0_f64;
    for _ in 0..3 {
        let g = GrowthField::uniform(&mesh, Mat3::IDENTITY + random_mat(&mut r, 0.1)).unwrap();
        let load = Load::uniform(&mesh, [0.0, -0.1, 0.0], [0.2, 0.0, 0.1]);
        let problem = ElasticProblem::new(&mesh, &w, &g, &load);
        let mut y = DeformationField::identity(&mesh);
        for v in mesh.free_nodes() {
            for c in 0..3 {
                y.0[v][c] += r.random_range(-0.03..0.03);
            }
        }
        let grad = problem.energy_gradient(&y).unwrap();
        let gmax = grad.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        for v in mesh.free_nodes() {
            for c in 0..3 {
                let h = 1e-6;
                let (mut yp, mut ym) = (y.clone(), y.clone());
                yp.0[v][c] += h;
                ym.0[v][c] -= h;
                let fd = (problem.total_energy(&yp).to_f64() - problem.total_energy(&ym).to_f64()) / (2.0 * h);
                grad_err = grad_err.max((fd - grad[v][c]).abs() / gmax);
            }
        }
    }
    out.push(check("fem: energy gradient against finite differences", grad_err, 1e-5));

    let mut model = MorphoModel::new(mesh.clone());
    model.grid = TimeGrid::new(0.5, 4);
    model.load.traction = [0.2, 0.0, 0.0];
    out.push(match run_morpho(&model) {
        Ok(t) => check(
            "growth: determinant identity and step bounds",
            t.records.iter().map(|r| r.diag.det_identity_err).fold(0.0, f64::max),
            crate::tolerances::DET_IDENTITY_REL,
        ),
        Err(e) => Check {
            name: "growth: determinant identity and step bounds",
            passed: false,
            detail: e.to_string(),
        },
    });

    model.rate = GrowthRate::zero();
    out.push(match run_morpho(&model) {
        Ok(t) => {
            let g0 = &t.records[0].g;
            let moved = t.records.iter().map(|r| r.y.max_dist(&t.records[0].y)).fold(0.0, f64::max);
            Check {
                name: "growth: frozen dynamics",
                passed: t.records.iter().all(|r| &r.g == g0) && moved <= 1e-8,
                detail: format!("max |y_i − y_0| = {moved:e}"),
            }
        }
        Err(e) => Check {
            name: "growth: frozen dynamics",
            passed: false,
            detail: e.to_string(),
        },
    });

    let n = mesh.num_nodes();
    let m_bar = r.random_range(-2.0..2.0);
    let cons = Consumption {
        h_c: 0.3,
        x_c: [0.5, 0.5, 0.5],
    };
    let conv = vec![[0.2, 0.4, 0.1]; n];
    let h = vec![cons.eval(conv[0]); n];
    let mu_prev = vec![m_bar; n];
    out.push(match nutrient_step(&mu_prev, &h, &conv, &cons, &mu_prev, 0.8, 0.05, &mesh) {
        Ok(mu) => check(
            "nutrient: constant-state exactness",
            mu.iter().map(|v| (v - m_bar).abs()).fold(0.0, f64::max),
            4.0 * f64::EPSILON * m_bar.abs().max(1.0),
        ),
        Err(e) => Check {
            name: "nutrient: constant-state exactness",
            passed: false,
            detail: e.to_string(),
        },
    });
    out
}
