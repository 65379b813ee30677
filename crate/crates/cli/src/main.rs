use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use morpho_core::config::{Mode, RunConfig};
use morpho_core::control::optimize_control;
use morpho_core::error::ConfigIssue;
use morpho_core::growth::{empty_trajectory, run_morpho_into, Trajectory};
use morpho_core::fem::DeformationField;
use morpho_core::nutrient::run_coupled_into;
use morpho_core::output::{control_csv_string, emit_csv, emit_vtk, emit_vtk_series};
use morpho_core::selftest::run_selftest;
use morpho_core::study::convergence_study;
use morpho_core::{Error, Result};

/// Time-discrete quasistatic morphoelasticity.
#[derive(Parser)]
#[command(name = "morpho", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (`key = value` lines); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Mechanical growth run.
    Simulate(Common),
    /// Growth coupled to the diffusing nutrient.
    SimulateCoupled(Common),
    /// Search the control family for the smallest objective.
    Control(Common),
    /// Successive step halving with Cauchy differences of the growth tensor.
    ConvergenceStudy {
        #[command(flatten)]
        common: Common,
        /// Number of grids N, 2N, 4N, ...
        #[arg(long, default_value_t = 4)]
        levels: usize,
    },
    /// Seeded invariant checks.
    Selftest(Common),
}

fn load_config(common: &Common, mode: Mode) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::Config(vec![ConfigIssue {
                    line: None,
                    message: format!("cannot read {}: {e}", path.display()),
                }])
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.check_mode(mode)?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), cfg.dump())?;
    Ok(dir)
}

/// Writes whatever part of the trajectory exists, then reports `res`.
fn finish_run(cfg: &RunConfig, dir: &Path, traj: &Trajectory, res: Result<()>) -> Result<()> {
    let model = cfg.model()?;
    if traj.len() > 1 {
        emit_csv(traj, &dir.join("trajectory.csv"))?;
        let every = (traj.len() / 8).max(1);
        emit_vtk_series(&model.mesh, traj, dir, every)?;
    }
    for w in &traj.warnings {
        eprintln!("warning: {w}");
    }
    res?;
    let last = traj.last();
    println!(
        "{} steps, τ = {}, final energy {}, min det G {}, max |G| {}",
        traj.len() - 1,
        traj.tau(),
        last.diag.energy,
        last.diag.min_det_g,
        last.diag.max_norm_g
    );
    println!("seed {}; output in {}", cfg.seed, dir.display());
    Ok(())
}

fn simulate(common: &Common) -> Result<()> {
    let cfg = load_config(common, Mode::Mechanical)?;
    let model = cfg.model()?;
    let dir = out_dir(&cfg)?;
    let mut traj = empty_trajectory(&model);
    let res = run_morpho_into(&model, DeformationField::identity(&model.mesh), &mut traj);
    finish_run(&cfg, &dir, &traj, res)
}

fn simulate_coupled(common: &Common) -> Result<()> {
    let cfg = load_config(common, Mode::Coupled)?;
    let model = cfg.model()?;
    let dir = out_dir(&cfg)?;
    let mut traj = empty_trajectory(&model);
    let res = run_coupled_into(&model, &cfg.nutrient_problem(), cfg.nutrient.order, &mut traj);
    finish_run(&cfg, &dir, &traj, res)
}

fn control(common: &Common) -> Result<()> {
    let cfg = load_config(common, Mode::Control)?;
    let model = cfg.model()?;
    let dir = out_dir(&cfg)?;
    let res = optimize_control(&model, &cfg.control_family()?, &cfg.objective(), &cfg.search(), cfg.control.order)?;
    fs::write(dir.join("candidates.csv"), control_csv_string(&res))?;
    emit_csv(&res.trajectory, &dir.join("best_trajectory.csv"))?;
    emit_vtk(&model.mesh, res.trajectory.last(), "best control, final step", &dir.join("best_final.vtk"))?;
    let coeffs: Vec<String> = res.coeffs.iter().map(|c| c.to_string()).collect();
    println!(
        "best candidate {} of {}: c = [{}], J = {} (growth {}, tracking {}, effort {})",
        res.best,
        res.candidates.len(),
        coeffs.join(", "),
        res.terms.total,
        res.terms.growth,
        res.terms.tracking,
        res.terms.effort
    );
    if res.budget_exhausted {
        println!("evaluation budget exhausted; result is the best candidate so far");
    }
    println!("seed {}; output in {}", cfg.seed, dir.display());
    Ok(())
}

fn study(common: &Common, levels: usize) -> Result<()> {
    let cfg = load_config(common, Mode::Mechanical)?;
    let model = cfg.model()?;
    let dir = out_dir(&cfg)?;
    let rep = convergence_study(&model, levels)?;
    let csv = rep.to_csv(cfg.t_final);
    fs::write(dir.join("study.csv"), &csv)?;
    print!("{csv}");
    println!(
        "e_k {}",
        if rep.strictly_decreasing() { "strictly decreasing" } else { "NOT strictly decreasing" }
    );
    println!("seed {}; output in {}", cfg.seed, dir.display());
    Ok(())
}

fn selftest(common: &Common) -> Result<()> {
    let cfg = load_config(common, Mode::Mechanical)?;
    let checks = run_selftest(cfg.seed);
    let mut failed = 0;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    println!("seed {}: {} checks, {failed} failed", cfg.seed, checks.len());
    if failed > 0 {
        return Err(Error::Invariant(format!("{failed} selftest checks failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Simulate(c) | Command::SimulateCoupled(c) | Command::Control(c) | Command::Selftest(c) => c,
        Command::ConvergenceStudy { common, .. } => common,
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let res = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::SimulateCoupled(c) => simulate_coupled(c),
        Command::Control(c) => control(c),
        Command::ConvergenceStudy { common, levels } => study(common, *levels),
        Command::Selftest(c) => selftest(c),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
