//! CSV diagnostics and legacy ASCII VTK snapshots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::control::ControlResult;
use crate::error::{Error, Result};
use crate::growth::{StepRecord, Trajectory};
use crate::mesh::Mesh;

pub const CSV_HEADER: &str = "i,t,energy,min_det_g,max_norm_g,max_step_rate,min_mu,max_mu";

#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub i: usize,
    pub t: f64,
    pub energy: f64,
    pub min_det_g: f64,
    pub max_norm_g: f64,
    pub max_step_rate: f64,
    /// NaN when the run carries no nutrient.
    pub min_mu: f64,
    pub max_mu: f64,
}

impl CsvRow {
    pub fn from_record(traj: &Trajectory, i: usize) -> Self {
        let d = &traj.records[i].diag;
        CsvRow {
            i,
            t: traj.grid.t(i),
            energy: d.energy,
            min_det_g: d.min_det_g,
            max_norm_g: d.max_norm_g,
            max_step_rate: d.max_step_rate,
            min_mu: d.min_mu.unwrap_or(f64::NAN),
            max_mu: d.max_mu.unwrap_or(f64::NAN),
        }
    }
}

/// One row per step `i = 1..N`. `{}` formatting of `f64` is the shortest
/// string that parses back to the same value.
pub fn csv_string(traj: &Trajectory) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for i in 1..traj.len() {
        let r = CsvRow::from_record(traj, i);
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.i, r.t, r.energy, r.min_det_g, r.max_norm_g, r.max_step_rate, r.min_mu, r.max_mu
        )
        .unwrap();
    }
    s
}

pub fn emit_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    fs::write(path, csv_string(traj))?;
    Ok(())
}

fn bad_csv(msg: String) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg))
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(bad_csv("unexpected CSV header".into()));
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad_csv(format!("row {}: expected 8 fields", k + 1)));
            }
            let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad_csv(format!("row {}: bad number `{}`", k + 1, f[j])));
            Ok(CsvRow {
                i: f[0].parse().map_err(|_| bad_csv(format!("row {}: bad index", k + 1)))?,
                t: num(1)?,
                energy: num(2)?,
                min_det_g: num(3)?,
                max_norm_g: num(4)?,
                max_step_rate: num(5)?,
                min_mu: num(6)?,
                max_mu: num(7)?,
            })
        })
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    parse_csv(&fs::read_to_string(path)?)
}

/// Legacy VTK 3.0 ASCII unstructured grid at the deformed positions.
pub fn vtk_string(mesh: &Mesh, rec: &StepRecord, title: &str) -> String {
    let nn = mesh.num_nodes();
    let nt = mesh.num_tets();
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    writeln!(s, "{}", title.lines().next().unwrap_or("")).unwrap();
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    writeln!(s, "POINTS {nn} double").unwrap();
    for y in &rec.y.0 {
        writeln!(s, "{} {} {}", y[0], y[1], y[2]).unwrap();
    }
    writeln!(s, "CELLS {nt} {}", 5 * nt).unwrap();
    for t in &mesh.tets {
        writeln!(s, "4 {} {} {} {}", t[0], t[1], t[2], t[3]).unwrap();
    }
    writeln!(s, "CELL_TYPES {nt}").unwrap();
    for _ in 0..nt {
        s.push_str("10\n");
    }
    writeln!(s, "CELL_DATA {nt}").unwrap();
    s.push_str("SCALARS detG double 1\nLOOKUP_TABLE default\n");
    for g in &rec.g.0 {
        writeln!(s, "{}", g.det).unwrap();
    }
    writeln!(s, "FIELD FieldData 1\nG 9 {nt} double").unwrap();
    for g in &rec.g.0 {
        let v: Vec<String> = g.g.as_slice().iter().map(|x| x.to_string()).collect();
        writeln!(s, "{}", v.join(" ")).unwrap();
    }
    if let Some(mu) = &rec.mu {
        writeln!(s, "POINT_DATA {nn}").unwrap();
        s.push_str("SCALARS nutrient double 1\nLOOKUP_TABLE default\n");
        for m in mu {
            writeln!(s, "{m}").unwrap();
        }
    }
    s
}

pub fn emit_vtk(mesh: &Mesh, rec: &StepRecord, title: &str, path: &Path) -> Result<()> {
    fs::write(path, vtk_string(mesh, rec, title))?;
    Ok(())
}

/// Writes `step_XXXX.vtk` for the records selected by `every` (the last
/// record is always written). Returns the written file names.
pub fn emit_vtk_series(mesh: &Mesh, traj: &Trajectory, dir: &Path, every: usize) -> Result<Vec<String>> {
    let every = every.max(1);
    let last = traj.len() - 1;
    let mut names = Vec::new();
    for (i, rec) in traj.records.iter().enumerate() {
        if i % every == 0 || i == last {
            let name = format!("step_{i:04}.vtk");
            emit_vtk(mesh, rec, &format!("step {i} t = {}", traj.grid.t(i)), &dir.join(&name))?;
            names.push(name);
        }
    }
    Ok(names)
}

/// Candidate table: `id`, one column per coefficient, J terms, J total.
pub fn control_csv_string(res: &ControlResult) -> String {
    let dim = res.coeffs.len();
    let mut s = String::from("id");
    for k in 0..dim {
        write!(s, ",c{k}").unwrap();
    }
    s.push_str(",growth,tracking,effort,total\n");
    for c in &res.candidates {
        write!(s, "{}", c.id).unwrap();
        for v in &c.coeffs {
            write!(s, ",{v}").unwrap();
        }
        match c.terms {
            Some(t) => writeln!(s, ",{},{},{},{}", t.growth, t.tracking, t.effort, t.total).unwrap(),
            None => s.push_str(",NaN,NaN,NaN,inf\n"),
        }
    }
    s
}
