//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines always show.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use morpho_core::config::RunConfig;
use morpho_core::control::{
    control_average, evaluate_j, grid_points, optimize_control, solve_given_control, BasisField, ControlFamily, Objective,
    SearchSpec,
};
use morpho_core::fem::{DeformationField, ElasticProblem, GrowthField, Load};
use morpho_core::growth::{run_morpho, GrowthRate, MorphoModel, TimeGrid};
use morpho_core::hyperelastic::EnergyDensity;
use morpho_core::mesh::Mesh;
use morpho_core::nutrient::{nutrient_step, run_coupled, Consumption, MuOrder, NutrientProblem, ScalarField};
use morpho_core::selftest::{random_admissible, random_mat, random_mat_with_norm, random_rotation};
use morpho_core::study::convergence_study;
use morpho_core::tensor::{mat_exp, Mat3};
use morpho_core::Error;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn default_model(steps: usize) -> MorphoModel {
    let mut cfg = RunConfig::default();
    cfg.steps = steps;
    cfg.model().unwrap()
}

fn determinant_identity() -> Outcome {
    let start = Instant::now();
    let mut model = default_model(32);
    model.check_invariants = false;
    let traj = run_morpho(&model).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let tau = traj.tau();
    let mut worst = 0.0_f64;
    for w in traj.records.windows(2) {
        for ((gp, gi), m) in w[0].g.0.iter().zip(&w[1].g.0).zip(&w[1].m_vals) {
            let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
            worst = worst.max((gi.g.det() - (tau * tr).exp() * gp.g.det()).abs() / gp.g.det());
        }
    }
    ensure(
        worst <= 1e-10 && elapsed <= Duration::from_secs(60),
        format!("max relative defect {worst:e} over 32 steps x {} qps, {elapsed:.1?}", model.mesh.num_tets()),
    )
}

fn nondegeneracy_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tightest = f64::INFINITY;
    for k in 0..5 {
        let rho = rng.random_range(0.5..3.0);
        let mut model = MorphoModel::new(Mesh::unit_cube(rng.random_range(2..=3)).unwrap());
        model.rate = GrowthRate {
            alpha0: rng.random_range(-3.0..1.0),
            alpha1: rng.random_range(-1.0..1.0),
            alpha2: rng.random_range(-1.0..2.0),
            alpha3: 0.0,
            rho,
        };
        model.g0 = Mat3::from_diag([rng.random_range(0.8..1.2), rng.random_range(0.8..1.2), rng.random_range(0.8..1.2)]);
        let t_final = rng.random_range(0.5..1.5);
        let min_steps = (t_final * rho / std::f64::consts::LN_2).floor() as usize + 1;
        model.grid = TimeGrid::new(t_final, min_steps + rng.random_range(0..8));
        model.load.traction = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0];
        model.check_invariants = false;
        let traj = run_morpho(&model).map_err(|e| format!("config {k}: {e}"))?;
        let tau = traj.tau();
        let delta = traj.records[0].g.0.iter().map(|p| p.g.det()).fold(f64::INFINITY, f64::min);
        for (i, rec) in traj.records.iter().enumerate() {
            let lower = (-3.0 * tau * i as f64 * rho).exp() * delta;
            for p in &rec.g.0 {
                let d = p.g.det();
                if d < lower {
                    return Err(format!("config {k}, step {i}: det G = {d} < {lower}"));
                }
                if i > 0 {
                    tightest = tightest.min(d / lower);
                }
            }
        }
    }
    ensure(true, format!("5 configs, min det G / bound = {tightest}"))
}

fn frozen_dynamics() -> Outcome {
    let mut model = default_model(8);
    model.rate = GrowthRate::zero();
    model.g0 = Mat3::from_diag([1.1, 0.95, 1.0]);
    let traj = run_morpho(&model).map_err(|e| e.to_string())?;
    let g0 = &traj.records[0].g;
    let bitwise = traj
        .records
        .iter()
        .all(|r| r.g.0.iter().zip(&g0.0).all(|(a, b)| a.g.as_slice().map(f64::to_bits) == b.g.as_slice().map(f64::to_bits)));
    let y0 = &traj.records[0].y;
    let moved = traj
        .records
        .iter()
        .flat_map(|r| r.y.0.iter().zip(&y0.0))
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    ensure(bitwise && moved <= 1e-8, format!("G bitwise constant: {bitwise}, max |y_i - y_0| = {moved:e}"))
}

fn gradient_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mesh = Mesh::unit_cube(3).unwrap();
    let density = EnergyDensity::default();
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let gs: Vec<Mat3> = (0..mesh.num_tets()).map(|_| Mat3::IDENTITY + random_mat(&mut rng, 0.15)).collect();
        let g = GrowthField::from_tensors(gs).unwrap();
        let load = Load::uniform(
            &mesh,
            [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.0],
            [rng.random_range(-0.3..0.3), 0.0, rng.random_range(-0.3..0.3)],
        );
        let problem = ElasticProblem::new(&mesh, &density, &g, &load);
        let mut y = DeformationField::identity(&mesh);
        for v in mesh.free_nodes() {
            for c in 0..3 {
                y.0[v][c] += rng.random_range(-0.02..0.02);
            }
        }
        let grad = problem.energy_gradient(&y).map_err(|e| e.to_string())?;
        let scale = grad.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        let h = 1e-6;
        for v in mesh.free_nodes() {
            for c in 0..3 {
                let (mut yp, mut ym) = (y.clone(), y.clone());
                yp.0[v][c] += h;
                ym.0[v][c] -= h;
                let fd = (problem.total_energy(&yp).to_f64() - problem.total_energy(&ym).to_f64()) / (2.0 * h);
                worst = worst.max((fd - grad[v][c]).abs() / scale);
            }
        }
    }
    let mut dw_worst = 0.0_f64;
    for _ in 0..1000 {
        let f = random_admissible(&mut rng);
        let dw = density.dw(&f).map_err(|e| e.to_string())?;
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let (mut fp, mut fm) = (f, f);
                fp[(i, j)] += h;
                fm[(i, j)] -= h;
                let fd = (density.w(&fp).to_f64() - density.w(&fm).to_f64()) / (2.0 * h);
                dw_worst = dw_worst.max((fd - dw[(i, j)]).abs() / dw.norm());
            }
        }
    }
    ensure(
        worst <= 1e-5 && dw_worst <= 1e-6,
        format!("energy gradient rel. err {worst:e} (20 states), DW rel. err {dw_worst:e}"),
    )
}

fn hypothesis_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = EnergyDensity::default();
    let (c1, c2) = (w.c1(), w.c2());
    let mut samples = 0;
    let (mut coerc, mut mandel) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    while samples < 10_000 {
        let f = random_mat(&mut rng, 2.0);
        let d = f.det();
        if d <= 1e-3 {
            continue;
        }
        samples += 1;
        let wf = w.w(&f).to_f64();
        let fro = f.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        coerc = coerc.max((c1 * fro.powf(w.p) - 1.0 / c1 - wf) / (1.0 + wf));
        let m = f.transpose() * w.dw(&f).map_err(|e| e.to_string())?;
        mandel = mandel.max((m.norm() - c2 * (wf + 1.0)) / (1.0 + wf));
    }
    let mut frame = 0.0_f64;
    for _ in 0..1000 {
        let f = random_admissible(&mut rng);
        let r = random_rotation(&mut rng);
        let wf = w.w(&f).to_f64();
        frame = frame.max((w.w(&(r * f)).to_f64() - wf).abs() / wf);
    }
    ensure(
        coerc <= 0.0 && mandel <= 0.0 && frame <= 1e-12,
        format!("c1 = {c1}, c2 = {c2}: max coercivity excess {coerc:e}, max Mandel excess {mandel:e}, frame rel. {frame:e}"),
    )
}

fn matrix_exponential() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut bound, mut det) = (f64::NEG_INFINITY, 0.0_f64);
    for _ in 0..10_000 {
        let r = rng.random_range(0.0..=5.0);
        let a = random_mat_with_norm(&mut rng, r);
        let e = mat_exp(&a);
        let an = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        let dev = (e - Mat3::IDENTITY).as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        bound = bound.max(dev - an.exp_m1());
        let tr = a[(0, 0)] + a[(1, 1)] + a[(2, 2)];
        det = det.max((e.det() - tr.exp()).abs() / tr.exp());
    }
    ensure(
        bound <= 0.0 && det <= 1e-12,
        format!("max |exp A - Id| - (e^|A| - 1) = {bound:e}, max det rel. err {det:e}"),
    )
}

fn uniform_growth() -> Outcome {
    let mut model = MorphoModel::new(Mesh::unit_cube(3).unwrap());
    let (alpha0, rho) = (0.4, 1.5);
    model.rate = GrowthRate::uniform(alpha0, rho);
    model.g0 = Mat3::from_diag([1.2, 0.9, 1.0]);
    model.grid = TimeGrid::new(1.0, 10);
    let traj = run_morpho(&model).map_err(|e| e.to_string())?;
    // sat_ρ(α₀ Id) = α₀ Id / √(1 + 3α₀²/ρ²)
    let m = alpha0 / (1.0 + 3.0 * alpha0 * alpha0 / (rho * rho)).sqrt();
    let want = (3.0 * m).exp() * 1.2 * 0.9;
    let worst = traj.last().g.0.iter().map(|p| (p.g.det() - want).abs() / want).fold(0.0, f64::max);
    ensure(worst <= 1e-8, format!("det G_N vs e^(3Tm) det G0 = {want}: max rel. err {worst:e}"))
}

fn cauchy_study() -> Outcome {
    let start = Instant::now();
    let model = default_model(8);
    let rep = convergence_study(&model, 4).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let dir = std::env::temp_dir().join(format!("morpho-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let path = dir.join("study.csv");
    std::fs::write(&path, rep.to_csv(model.grid.t_final)).map_err(|e| e.to_string())?;
    let emitted = std::fs::read_to_string(&path).map(|s| s.lines().count() == 4).unwrap_or(false);
    std::fs::remove_dir_all(&dir).ok();
    let decreasing = rep.errors.windows(2).all(|w| w[1] < w[0]);
    ensure(
        rep.steps == [8, 16, 32, 64] && decreasing && emitted && elapsed <= Duration::from_secs(600),
        format!("N = {:?}, e_k = {:?}, ratios = {:?}, {elapsed:.1?}", rep.steps, rep.errors, rep.ratios),
    )
}

fn nutrient_exactness() -> Outcome {
    let mesh = Mesh::unit_cube(4).unwrap();
    let n = mesh.num_nodes();
    let m_bar = 0.8125;
    let cons = Consumption {
        h_c: 0.7,
        x_c: [0.3, 0.6, 0.5],
    };
    let conv = vec![[0.25, 0.5, 0.75]; n];
    let d = [0.25 - 0.3, 0.5 - 0.6, 0.75 - 0.5];
    let h = vec![0.7 / (1.0 + d[0] * d[0] + d[1] * d[1] + d[2] * d[2]); n];
    let mu = nutrient_step(&vec![m_bar; n], &h, &conv, &cons, &vec![m_bar; n], 0.5, 0.0625, &mesh).map_err(|e| e.to_string())?;
    let err = mu.iter().map(|v| (v - m_bar).abs()).fold(0.0, f64::max);

    let mut model = default_model(8);
    model.rate.alpha3 = 0.0;
    let plain = run_morpho(&model).map_err(|e| e.to_string())?;
    let problem = NutrientProblem {
        nu: 0.3,
        source: ScalarField::new(|t, x| 1.0 + t * x[0]),
        consumption: cons,
        boundary: ScalarField::constant(0.5),
        initial: ScalarField::constant(0.5),
    };
    let coupled = run_coupled(&model, &problem, MuOrder::Previous).map_err(|e| e.to_string())?;
    let same = plain.records.iter().zip(&coupled.records).all(|(a, b)| a.y == b.y && a.g == b.g);
    ensure(
        err <= 2.0 * f64::EPSILON * m_bar && same,
        format!("constant state max err {err:e}; coupled α3 = 0 run bitwise equal: {same}"),
    )
}

fn control_soundness() -> Outcome {
    let mut model = MorphoModel::new(Mesh::unit_cube(2).unwrap());
    model.grid = TimeGrid::new(0.5, 4);
    model.load.traction = [0.1, 0.0, 0.0];
    model.rate.alpha3 = 0.8;
    let basis = ["const", "x"].iter().map(|b| BasisField::from_id(b).unwrap()).collect();
    let fam = ControlFamily::new(basis, vec![-1.0, -1.0], vec![1.0, 1.0]).map_err(|e| e.to_string())?;
    let obj = Objective {
        beta1: 1.0,
        beta2: 10.0,
        beta3: 0.1,
        p: 4.0,
        target_disp: [0.05, 0.0, 0.0],
    };
    let res = optimize_control(&model, &fam, &obj, &SearchSpec::Grid(vec![3, 3]), MuOrder::Current).map_err(|e| e.to_string())?;
    let mut best = f64::INFINITY;
    for c in grid_points(&fam, &[3, 3]) {
        let mu = fam.control(&c);
        let traj = solve_given_control(&model, &mu, MuOrder::Current).map_err(|e| e.to_string())?;
        let qp = control_average(&mu, &model.grid, &model.mesh.quad_points);
        best = best.min(evaluate_j(&traj, &model.mesh, &qp, &obj).total);
    }
    let grid_ok = res.candidates.len() == 9 && res.terms.total == best;

    // 1 tet, N = 2, zero rate and load: y stays the identity and G = Id.
    let mut tet = MorphoModel::new(Mesh::single_tet().unwrap());
    tet.rate = GrowthRate::zero();
    tet.grid = TimeGrid::new(1.0, 2);
    let fam = ControlFamily::new(vec![BasisField::from_id("t").unwrap()], vec![2.0], vec![2.0]).map_err(|e| e.to_string())?;
    let obj = Objective {
        beta1: 3.0,
        beta2: 5.0,
        beta3: 7.0,
        p: 4.0,
        target_disp: [0.2, 0.0, 0.0],
    };
    let r = optimize_control(&tet, &fam, &obj, &SearchSpec::Grid(vec![1]), MuOrder::Current).map_err(|e| e.to_string())?;
    let (vol, tau) = (1.0 / 6.0, 0.5);
    let growth = 3.0 * vol;
    let tracking = 5.0 * tau * vol * (0.1f64.powi(4) + 0.2f64.powi(4));
    let effort = 7.0 * tau * vol * (0.5f64.powi(4) + 1.5f64.powi(4));
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-14 * b.abs().max(1.0);
    let hand_ok = close(r.terms.growth, growth) && close(r.terms.tracking, tracking) && close(r.terms.effort, effort);
    ensure(
        grid_ok && hand_ok,
        format!(
            "grid J* = {} vs exhaustive {best}; 1-tet terms ({}, {}, {}) vs hand ({growth}, {tracking}, {effort})",
            res.terms.total, r.terms.growth, r.terms.tracking, r.terms.effort
        ),
    )
}

fn interpolant_gap() -> Outcome {
    let traj = run_morpho(&default_model(16)).map_err(|e| e.to_string())?;
    let tau = traj.tau();
    let rate = traj
        .records
        .windows(2)
        .flat_map(|w| w[0].g.0.iter().zip(&w[1].g.0).map(|(a, b)| (b.g - a.g).norm() / tau))
        .fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let t = rng.random_range(0.0..=traj.grid.t_final);
        let i = ((t / tau).ceil() as usize).clamp(1, traj.grid.steps);
        let s = (t - (i - 1) as f64 * tau) / tau;
        for (a, b) in traj.records[i - 1].g.0.iter().zip(&traj.records[i].g.0) {
            let hat = a.g * (1.0 - s) + b.g * s;
            worst = worst.max((b.g - hat).norm());
        }
        let lib = traj.g_bar(t).iter().zip(traj.g_hat(t)).map(|(p, q)| (*p - q).norm()).fold(0.0, f64::max);
        worst = worst.max(lib);
    }
    ensure(worst <= tau * rate * (1.0 + 1e-12), format!("max gap {worst:e} <= τ · max rate = {:e}", tau * rate))
}

fn guard_rails() -> Outcome {
    let cases = ["growth.rho = 2\ntime.N = 2\n", "growth.rho = 0.6931471805599453\ntime.N = 1\n", "time.T = 3\ntime.N = 4\n"];
    for text in cases {
        match RunConfig::parse(text) {
            Err(Error::Config(issues)) if issues.iter().any(|i| i.message.contains("τ*") && i.message.contains("(log 2)/‖M‖")) => {}
            other => return Err(format!("{text:?} not rejected with the named constraint: {other:?}")),
        }
    }
    let mut model = default_model(4);
    model.rate.rho = 3.0;
    let run = matches!(run_morpho(&model), Err(Error::Config(_)));
    let below = RunConfig::parse("time.T = 3\ntime.N = 5\n").is_ok();
    ensure(run && below, format!("{} configs rejected naming τ*; direct run rejected: {run}; τ < τ* accepted: {below}", cases.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("determinant identity", determinant_identity),
        ("nondegeneracy bound", nondegeneracy_bound),
        ("frozen dynamics", frozen_dynamics),
        ("gradient consistency", gradient_consistency),
        ("coercivity, Mandel control, frame indifference", hypothesis_suite),
        ("matrix exponential", matrix_exponential),
        ("uniform-growth closed form", uniform_growth),
        ("step-halving Cauchy study", cauchy_study),
        ("nutrient constant state and decoupling", nutrient_exactness),
        ("control soundness", control_soundness),
        ("interpolant gap", interpolant_gap),
        ("step-size guard rails", guard_rails),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
