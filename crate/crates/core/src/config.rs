//! Flat `key = value` run configuration with dotted sections.
//!
//! ```text
//! # comment
//! mesh.n = 4
//! growth.alpha1 = 0.5
//! load.g = 0.2, 0, 0
//! control.basis = const, x
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::control::{BasisField, ControlFamily, Objective, SearchSpec};
use crate::error::{ConfigIssue, Error, Result};
use crate::growth::{tau_star_message, ConvolutionKernel, GrowthRate, LoadProfile, LoadSpec, Mollifier, MorphoModel, TimeGrid, TimeKernel};
use crate::hyperelastic::EnergyDensity;
use crate::mesh::Mesh;
use crate::minimize::MinimizeOptions;
use crate::nutrient::{Consumption, MuOrder, NutrientProblem, ScalarField};
use crate::tensor::{Mat3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Mechanical,
    Coupled,
    Control,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NutrientSpec {
    pub nu: f64,
    /// Constant source `h`.
    pub h: f64,
    pub h_c: f64,
    pub x_c: Vec3,
    /// Constant Dirichlet value.
    pub mu_d: f64,
    /// Constant initial value.
    pub mu0: f64,
    pub order: MuOrder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlSpec {
    pub basis: Vec<String>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Points per coordinate for an exhaustive grid; pattern search if absent.
    pub grid: Option<Vec<usize>>,
    pub budget: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub target_disp: Vec3,
    pub order: MuOrder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mesh_n: usize,
    pub density: EnergyDensity,
    pub rate: GrowthRate,
    pub r_phi: f64,
    pub t_rel: f64,
    /// `G⁰ = g0 · Id`.
    pub g0: f64,
    pub load: LoadSpec,
    pub nutrient: NutrientSpec,
    pub t_final: f64,
    pub steps: usize,
    pub control: ControlSpec,
    pub gtol: f64,
    pub max_iter: usize,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mesh_n: 4,
            density: EnergyDensity::default(),
            rate: GrowthRate::default(),
            r_phi: 0.4,
            t_rel: 0.25,
            g0: 1.0,
            load: LoadSpec {
                traction: [0.2, 0.0, 0.0],
                ..LoadSpec::default()
            },
            nutrient: NutrientSpec {
                nu: 1.0,
                h: 0.0,
                h_c: 0.0,
                x_c: [0.5, 0.5, 0.5],
                mu_d: 1.0,
                mu0: 1.0,
                order: MuOrder::Previous,
            },
            t_final: 1.0,
            steps: 16,
            control: ControlSpec {
                basis: vec!["const".into()],
                lo: vec![-1.0],
                hi: vec![1.0],
                grid: None,
                budget: 20,
                beta1: 1.0,
                beta2: 1.0,
                beta3: 0.1,
                target_disp: [0.1, 0.0, 0.0],
                order: MuOrder::Current,
            },
            gtol: crate::tolerances::MINIMIZER_GTOL,
            max_iter: 5000,
            output_dir: None,
            seed: 0,
        }
    }
}

pub const KEYS: [&str; 43] = [
    "mesh.n",
    "energy.a",
    "energy.b",
    "energy.s",
    "energy.p",
    "growth.alpha0",
    "growth.alpha1",
    "growth.alpha2",
    "growth.alpha3",
    "growth.rho",
    "growth.r_phi",
    "growth.t_rel",
    "growth.g0",
    "load.f",
    "load.g",
    "load.profile",
    "nutrient.nu",
    "nutrient.h",
    "nutrient.h_c",
    "nutrient.x_c",
    "nutrient.mu_d",
    "nutrient.mu0",
    "nutrient.order",
    "time.T",
    "time.N",
    "control.basis",
    "control.lo",
    "control.hi",
    "control.grid",
    "control.budget",
    "control.beta1",
    "control.beta2",
    "control.beta3",
    "control.target_disp",
    "control.order",
    "solver.gtol",
    "solver.max_iter",
    "output.dir",
    "seed",
    // reserved spellings accepted as aliases
    "time.t_final",
    "time.steps",
    "mesh.resolution",
    "energy.exponent",
];

fn canonical(key: &str) -> &str {
    match key {
        "time.t_final" => "time.T",
        "time.steps" => "time.N",
        "mesh.resolution" => "mesh.n",
        "energy.exponent" => "energy.p",
        k => k,
    }
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    v.parse::<f64>().map_err(|_| format!("expected a number, got `{v}`"))
}

fn parse_list<T, F: Fn(&str) -> std::result::Result<T, String>>(v: &str, f: F) -> std::result::Result<Vec<T>, String> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

fn parse_vec3(v: &str) -> std::result::Result<Vec3, String> {
    let xs = parse_list(v, parse_f64)?;
    match xs.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(format!("expected three numbers, got `{v}`")),
    }
}

fn parse_usize(v: &str) -> std::result::Result<usize, String> {
    v.parse::<usize>().map_err(|_| format!("expected a non-negative integer, got `{v}`"))
}

fn parse_order(v: &str) -> std::result::Result<MuOrder, String> {
    match v {
        "previous" => Ok(MuOrder::Previous),
        "current" => Ok(MuOrder::Current),
        _ => Err(format!("expected `previous` or `current`, got `{v}`")),
    }
}

fn order_name(o: MuOrder) -> &'static str {
    match o {
        MuOrder::Previous => "previous",
        MuOrder::Current => "current",
    }
}

fn profile_name(p: LoadProfile) -> &'static str {
    match p {
        LoadProfile::Constant => "constant",
        LoadProfile::Ramp => "ramp",
        LoadProfile::Sine => "sine",
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses and validates the mode-independent constraints.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut issues = Vec::new();
        let mut lines_of: HashMap<&'static str, usize> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                issues.push(ConfigIssue {
                    line: Some(line),
                    message: format!("expected `key = value`, got `{content}`"),
                });
                continue;
            };
            let (key, value) = (canonical(key.trim()), value.trim());
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                issues.push(ConfigIssue {
                    line: Some(line),
                    message: format!("unknown key `{key}`"),
                });
                continue;
            };
            if let Some(prev) = lines_of.insert(known, line) {
                issues.push(ConfigIssue {
                    line: Some(line),
                    message: format!("key `{key}` already set on line {prev}"),
                });
                continue;
            }
            if let Err(message) = cfg.set(known, value) {
                issues.push(ConfigIssue {
                    line: Some(line),
                    message: format!("{key}: {message}"),
                });
            }
        }
        if issues.is_empty() {
            issues = cfg.validate(Mode::Mechanical, &lines_of);
        }
        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(issues))
        }
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let f = || parse_f64(v);
        match key {
            "mesh.n" => self.mesh_n = parse_usize(v)?,
            "energy.a" => self.density.a = f()?,
            "energy.b" => self.density.b = f()?,
            "energy.s" => self.density.s = f()?,
            "energy.p" => self.density.p = f()?,
            "growth.alpha0" => self.rate.alpha0 = f()?,
            "growth.alpha1" => self.rate.alpha1 = f()?,
            "growth.alpha2" => self.rate.alpha2 = f()?,
            "growth.alpha3" => self.rate.alpha3 = f()?,
            "growth.rho" => self.rate.rho = f()?,
            "growth.r_phi" => self.r_phi = f()?,
            "growth.t_rel" => self.t_rel = f()?,
            "growth.g0" => self.g0 = f()?,
            "load.f" => self.load.body = parse_vec3(v)?,
            "load.g" => self.load.traction = parse_vec3(v)?,
            "load.profile" => {
                self.load.profile = match v {
                    "constant" => LoadProfile::Constant,
                    "ramp" => LoadProfile::Ramp,
                    "sine" => LoadProfile::Sine,
                    _ => return Err(format!("expected `constant`, `ramp` or `sine`, got `{v}`")),
                }
            }
            "nutrient.nu" => self.nutrient.nu = f()?,
            "nutrient.h" => self.nutrient.h = f()?,
            "nutrient.h_c" => self.nutrient.h_c = f()?,
            "nutrient.x_c" => self.nutrient.x_c = parse_vec3(v)?,
            "nutrient.mu_d" => self.nutrient.mu_d = f()?,
            "nutrient.mu0" => self.nutrient.mu0 = f()?,
            "nutrient.order" => self.nutrient.order = parse_order(v)?,
            "time.T" => self.t_final = f()?,
            "time.N" => self.steps = parse_usize(v)?,
            "control.basis" => {
                self.control.basis = parse_list(v, |s| {
                    BasisField::from_id(s)
                        .map(|b| b.id)
                        .ok_or_else(|| format!("unknown basis id `{s}` (known: {})", crate::control::BASIS_IDS.join(", ")))
                })?
            }
            "control.lo" => self.control.lo = parse_list(v, parse_f64)?,
            "control.hi" => self.control.hi = parse_list(v, parse_f64)?,
            "control.grid" => self.control.grid = Some(parse_list(v, parse_usize)?),
            "control.budget" => self.control.budget = parse_usize(v)?,
            "control.beta1" => self.control.beta1 = f()?,
            "control.beta2" => self.control.beta2 = f()?,
            "control.beta3" => self.control.beta3 = f()?,
            "control.target_disp" => self.control.target_disp = parse_vec3(v)?,
            "control.order" => self.control.order = parse_order(v)?,
            "solver.gtol" => self.gtol = f()?,
            "solver.max_iter" => self.max_iter = parse_usize(v)?,
            "output.dir" => self.output_dir = Some(PathBuf::from(v)),
            "seed" => self.seed = v.parse::<u64>().map_err(|_| format!("expected an unsigned integer, got `{v}`"))?,
            _ => unreachable!("key list and setter out of sync: {key}"),
        }
        Ok(())
    }

    fn validate(&self, mode: Mode, lines: &HashMap<&'static str, usize>) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut need = |ok: bool, key: &str, message: String| {
            if !ok {
                issues.push(ConfigIssue {
                    line: lines.get(key).copied(),
                    message,
                });
            }
        };
        let d = &self.density;
        need(self.mesh_n >= 2, "mesh.n", format!("mesh.n = {} must be at least 2", self.mesh_n));
        need(d.p > 3.0, "energy.p", format!("energy.p = {} must exceed 3", d.p));
        need(d.a > 0.0, "energy.a", format!("energy.a = {} must be positive", d.a));
        need(d.b > 0.0, "energy.b", format!("energy.b = {} must be positive", d.b));
        need(d.s > 0.0, "energy.s", format!("energy.s = {} must be positive", d.s));
        need(self.rate.rho > 0.0 && self.rate.rho.is_finite(), "growth.rho", format!("growth.rho = {} must be positive", self.rate.rho));
        need(self.r_phi > 0.0, "growth.r_phi", format!("growth.r_phi = {} must be positive", self.r_phi));
        need(self.t_rel > 0.0, "growth.t_rel", format!("growth.t_rel = {} must be positive", self.t_rel));
        need(self.g0 > 0.0, "growth.g0", format!("growth.g0 = {} must be positive", self.g0));
        need(self.t_final > 0.0 && self.t_final.is_finite(), "time.T", format!("time.T = {} must be positive", self.t_final));
        need(self.steps >= 1, "time.N", format!("time.N = {} must be at least 1", self.steps));
        need(self.gtol > 0.0, "solver.gtol", format!("solver.gtol = {} must be positive", self.gtol));
        need(self.max_iter >= 1, "solver.max_iter", "solver.max_iter must be at least 1".into());
        if self.rate.rho > 0.0 && self.t_final > 0.0 && self.steps >= 1 {
            let tau = self.t_final / self.steps as f64;
            let tau_star = self.rate.tau_star();
            let line = lines.get("time.N").or(lines.get("time.T")).or(lines.get("growth.rho")).copied();
            if !(tau < tau_star) {
                issues.push(ConfigIssue {
                    line,
                    message: tau_star_message(tau, tau_star),
                });
            }
        }
        if mode == Mode::Coupled {
            let nu = self.nutrient.nu;
            issues.extend((!(nu > 0.0)).then(|| ConfigIssue {
                line: lines.get("nutrient.nu").copied(),
                message: format!("nutrient.nu = {nu} must be positive for a coupled run"),
            }));
        }
        if mode == Mode::Control {
            let c = &self.control;
            let k = c.basis.len();
            let mut check = |ok: bool, key: &str, message: String| {
                if !ok {
                    issues.push(ConfigIssue {
                        line: lines.get(key).copied(),
                        message,
                    });
                }
            };
            check(k > 0, "control.basis", "control.basis must name at least one field".into());
            check(c.lo.len() == k, "control.lo", format!("control.lo has {} entries for {k} basis fields", c.lo.len()));
            check(c.hi.len() == k, "control.hi", format!("control.hi has {} entries for {k} basis fields", c.hi.len()));
            for (j, (l, h)) in c.lo.iter().zip(&c.hi).enumerate() {
                check(l <= h, "control.hi", format!("control box coordinate {j}: lo = {l} exceeds hi = {h}"));
            }
            if let Some(g) = &c.grid {
                check(g.len() == k && !g.contains(&0), "control.grid", format!("control.grid needs {k} positive counts"));
            } else {
                check(c.budget >= 1, "control.budget", "control.budget must be at least 1".into());
            }
            for (key, b) in [("control.beta1", c.beta1), ("control.beta2", c.beta2), ("control.beta3", c.beta3)] {
                check(b >= 0.0, key, format!("{key} = {b} must be non-negative"));
            }
        }
        issues
    }

    /// Mode-specific constraints on top of those checked by [`RunConfig::parse`].
    pub fn check_mode(&self, mode: Mode) -> Result<()> {
        let issues = self.validate(mode, &HashMap::new());
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    /// Every key with its current value, one per line, in canonical order.
    pub fn dump(&self) -> String {
        let v3 = |v: Vec3| format!("{}, {}, {}", v[0], v[1], v[2]);
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let c = &self.control;
        let n = &self.nutrient;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("mesh.n", self.mesh_n.to_string());
        kv("energy.a", self.density.a.to_string());
        kv("energy.b", self.density.b.to_string());
        kv("energy.s", self.density.s.to_string());
        kv("energy.p", self.density.p.to_string());
        kv("growth.alpha0", self.rate.alpha0.to_string());
        kv("growth.alpha1", self.rate.alpha1.to_string());
        kv("growth.alpha2", self.rate.alpha2.to_string());
        kv("growth.alpha3", self.rate.alpha3.to_string());
        kv("growth.rho", self.rate.rho.to_string());
        kv("growth.r_phi", self.r_phi.to_string());
        kv("growth.t_rel", self.t_rel.to_string());
        kv("growth.g0", self.g0.to_string());
        kv("load.f", v3(self.load.body));
        kv("load.g", v3(self.load.traction));
        kv("load.profile", profile_name(self.load.profile).into());
        kv("nutrient.nu", n.nu.to_string());
        kv("nutrient.h", n.h.to_string());
        kv("nutrient.h_c", n.h_c.to_string());
        kv("nutrient.x_c", v3(n.x_c));
        kv("nutrient.mu_d", n.mu_d.to_string());
        kv("nutrient.mu0", n.mu0.to_string());
        kv("nutrient.order", order_name(n.order).into());
        kv("time.T", self.t_final.to_string());
        kv("time.N", self.steps.to_string());
        kv("control.basis", c.basis.join(", "));
        kv("control.lo", list(&c.lo));
        kv("control.hi", list(&c.hi));
        if let Some(g) = &c.grid {
            kv("control.grid", g.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "));
        }
        kv("control.budget", c.budget.to_string());
        kv("control.beta1", c.beta1.to_string());
        kv("control.beta2", c.beta2.to_string());
        kv("control.beta3", c.beta3.to_string());
        kv("control.target_disp", v3(c.target_disp));
        kv("control.order", order_name(c.order).into());
        kv("solver.gtol", self.gtol.to_string());
        kv("solver.max_iter", self.max_iter.to_string());
        if let Some(d) = &self.output_dir {
            kv("output.dir", d.display().to_string());
        }
        kv("seed", self.seed.to_string());
        s
    }

    pub fn model(&self) -> Result<MorphoModel> {
        let mut model = MorphoModel::new(Mesh::unit_cube(self.mesh_n)?);
        model.density = self.density;
        model.rate = self.rate;
        model.kernel = ConvolutionKernel {
            time: TimeKernel::Relaxation { t_rel: self.t_rel },
            space: Mollifier::new(self.r_phi),
        };
        model.load = self.load;
        model.grid = TimeGrid::new(self.t_final, self.steps);
        model.g0 = Mat3::IDENTITY * self.g0;
        model.minimizer = MinimizeOptions {
            gtol: self.gtol,
            max_iter: self.max_iter,
            ..MinimizeOptions::default()
        };
        Ok(model)
    }

    pub fn nutrient_problem(&self) -> NutrientProblem {
        let n = &self.nutrient;
        NutrientProblem {
            nu: n.nu,
            source: ScalarField::constant(n.h),
            consumption: Consumption { h_c: n.h_c, x_c: n.x_c },
            boundary: ScalarField::constant(n.mu_d),
            initial: ScalarField::constant(n.mu0),
        }
    }

    pub fn control_family(&self) -> Result<ControlFamily> {
        let c = &self.control;
        let basis = c.basis.iter().map(|id| BasisField::from_id(id).expect("ids checked on parse")).collect();
        ControlFamily::new(basis, c.lo.clone(), c.hi.clone())
    }

    pub fn objective(&self) -> Objective {
        let c = &self.control;
        Objective {
            beta1: c.beta1,
            beta2: c.beta2,
            beta3: c.beta3,
            p: self.density.p,
            target_disp: c.target_disp,
        }
    }

    pub fn search(&self) -> SearchSpec {
        match &self.control.grid {
            Some(g) => SearchSpec::Grid(g.clone()),
            None => SearchSpec::Pattern { budget: self.control.budget },
        }
    }
}
