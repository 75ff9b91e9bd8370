//! CSV artifacts. Floats use the shortest representation that parses back
//! to the same value, so recomputing from files is exact.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::harness::config::{Algorithm, Experiment};
use crate::harness::experiment::RunResult;
use crate::harness::metrics::GridDensity;
use crate::simulate::Trajectory;

fn io(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    let f = File::create(path).map_err(|e| io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| io(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

/// `t, x_true_1..n, xhat_1..n, var_1..n`.
pub fn write_states(
    path: &Path,
    truth: &[DVector<f64>],
    means: &[DVector<f64>],
    variances: &[DVector<f64>],
) -> Result<()> {
    let n = truth.first().map_or(0, |x| x.len());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(numbered("x_true", n))
        .chain(numbered("xhat", n))
        .chain(numbered("var", n))
        .collect();
    let rows = (0..truth.len()).map(|i| {
        std::iter::once((i + 1).to_string())
            .chain(truth[i].iter().map(|v| num(*v)))
            .chain(means[i].iter().map(|v| num(*v)))
            .chain(variances[i].iter().map(|v| num(*v)))
            .collect()
    });
    write_rows(path, &header, rows)
}

/// Contents of a states file.
#[derive(Debug, Clone, PartialEq)]
pub struct StatesTable {
    pub truth: Vec<DVector<f64>>,
    pub means: Vec<DVector<f64>>,
    pub variances: Vec<DVector<f64>>,
}

pub fn read_states(path: &Path) -> Result<StatesTable> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io(path, e))?;
    let width = r.headers().map_err(|e| io(path, e))?.len();
    if width < 4 || (width - 1) % 3 != 0 {
        return Err(io(path, "not a states file"));
    }
    let n = (width - 1) / 3;
    let mut t = StatesTable {
        truth: Vec::new(),
        means: Vec::new(),
        variances: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec.map_err(|e| io(path, e))?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| io(path, e)))
            .collect::<Result<_>>()?;
        t.truth.push(DVector::from_column_slice(&vals[..n]));
        t.means.push(DVector::from_column_slice(&vals[n..2 * n]));
        t.variances.push(DVector::from_column_slice(&vals[2 * n..]));
    }
    Ok(t)
}

/// `x, density` under a comment line naming the source and time.
pub fn write_density(path: &Path, source: &str, t: usize, coordinate: usize, d: &GridDensity) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    let mut f = BufWriter::new(File::create(path).map_err(|e| io(path, e))?);
    writeln!(f, "# algorithm={source} t={t} coordinate={}", coordinate + 1).map_err(|e| io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["x", "density"]).map_err(|e| io(path, e))?;
    for (x, v) in d.grid.nodes().iter().zip(&d.values) {
        w.write_record([num(*x), num(*v)]).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

/// `(x, density)` columns of a density file.
pub fn read_density(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| io(path, e))?;
    let (mut xs, mut ds) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| io(path, e))?;
        let p = |i: usize| rec[i].parse::<f64>().map_err(|e| io(path, e));
        xs.push(p(0)?);
        ds.push(p(1)?);
    }
    Ok((xs, ds))
}

/// `t, u_1..m, x_1..n, r, z, y`.
pub fn write_simulation(path: &Path, traj: &Trajectory) -> Result<()> {
    let m = traj.inputs.first().map_or(0, |u| u.len());
    let n = traj.states.first().map_or(0, |x| x.len());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(numbered("u", m))
        .chain(numbered("x", n))
        .chain(["r", "z", "y"].map(String::from))
        .collect();
    let rows = (0..traj.len()).map(|i| {
        std::iter::once((i + 1).to_string())
            .chain(traj.inputs[i].iter().map(|v| num(*v)))
            .chain(traj.states[i].iter().map(|v| num(*v)))
            .chain([traj.linear_outputs[i], traj.noiseless_outputs[i], traj.measurements[i]].map(num))
            .collect()
    });
    write_rows(path, &header, rows)
}

pub fn states_path(dir: &Path, a: Algorithm) -> PathBuf {
    dir.join(format!("states_{a}.csv"))
}

pub fn density_path(dir: &Path, source: &str, t: usize) -> PathBuf {
    dir.join(format!("density_{source}_t{t:03}.csv"))
}

/// Simulation, per-estimator states and densities for one realization.
pub fn write_run(dir: &Path, exp: &Experiment, run: &RunResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    write_simulation(&dir.join("simulation.csv"), &run.trajectory)?;
    let g = &exp.config.grid;
    let fixed = g.fixed()?;
    let coordinate = g.coordinate - 1;
    for (a, r) in &run.runs {
        let Ok(r) = r else { continue };
        write_states(&states_path(dir, *a), &run.trajectory.states, &r.means, &r.variances)?;
        for (&t, d) in &r.marginals {
            let grid = run.grid_at(t, fixed, g.points)?;
            write_density(
                &density_path(dir, a.name(), t),
                a.name(),
                t,
                coordinate,
                &d.evaluate(&grid),
            )?;
        }
    }
    if let Some(Ok(reference)) = &run.reference {
        for (name, map) in [("gt_filter", &reference.filter), ("gt_smoother", &reference.smoother)] {
            for (&t, d) in map {
                let grid = run.grid_at(t, fixed, g.points)?;
                write_density(&density_path(dir, name, t), name, t, coordinate, &d.evaluate(&grid))?;
            }
        }
    }
    Ok(())
}

/// Writes a table of string cells with a header.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    write_rows(path, &header, rows.iter().cloned())
}

pub(crate) fn format_number(x: f64) -> String {
    num(x)
}
