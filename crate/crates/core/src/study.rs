//! Empirical τ-Cauchy study: the same model on grids `N, 2N, 4N, …`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::growth::{run_morpho, MorphoModel, TimeGrid, Trajectory};

#[derive(Clone, Debug, PartialEq)]
pub struct StudyReport {
    pub steps: Vec<usize>,
    /// `e_k = max_{i, q} |G^{(k)}_i − G^{(k+1)}_{2i}|`, one per consecutive pair.
    pub errors: Vec<f64>,
    /// `e_k / e_{k+1}`.
    pub ratios: Vec<f64>,
}

pub const STUDY_HEADER: &str = "level,steps,tau,e_k,ratio";

impl StudyReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] < w[0])
    }

    /// One row per compared pair; `ratio` is NaN on the last row.
    pub fn to_csv(&self, t_final: f64) -> String {
        let mut s = String::from(STUDY_HEADER);
        s.push('\n');
        for (k, e) in self.errors.iter().enumerate() {
            let n = self.steps[k];
            let ratio = self.ratios.get(k).copied().unwrap_or(f64::NAN);
            writeln!(s, "{k},{n},{},{e},{ratio}", t_final / n as f64).unwrap();
        }
        s
    }
}

/// Sup over the coarse grid's nodes and all quadrature points.
pub fn cauchy_gap(coarse: &Trajectory, fine: &Trajectory) -> f64 {
    let mut e = 0.0_f64;
    for (i, rec) in coarse.records.iter().enumerate() {
        for (a, b) in rec.g.0.iter().zip(&fine.records[2 * i].g.0) {
            e = e.max((a.g - b.g).norm());
        }
    }
    e
}

/// Runs `levels` successively halved steps starting from `model.grid`.
pub fn convergence_study(model: &MorphoModel, levels: usize) -> Result<StudyReport> {
    if levels < 2 {
        return Err(Error::Degenerate(format!("a convergence study needs at least 2 levels, got {levels}")));
    }
    let mut grid = model.grid;
    let mut runs = Vec::with_capacity(levels);
    for _ in 0..levels {
        let mut m = model.clone();
        m.grid = grid;
        runs.push(run_morpho(&m)?);
        grid = TimeGrid::new(grid.t_final, 2 * grid.steps);
    }
    let errors: Vec<f64> = runs.windows(2).map(|w| cauchy_gap(&w[0], &w[1])).collect();
    let ratios = errors.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(StudyReport {
        steps: runs.iter().map(|r| r.grid.steps).collect(),
        errors,
        ratios,
    })
}
