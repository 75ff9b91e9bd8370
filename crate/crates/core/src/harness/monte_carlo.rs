//! Monte Carlo runs over derived seeds.
//!
//! Runs execute in parallel; each writes only its own directory, and the
//! aggregate tables are assembled in run-index order, so the files do not
//! depend on scheduling. Wall-clock times are kept in memory only.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::config::{Algorithm, Experiment};
use crate::harness::experiment::{run_realization, DensityRequest, RunResult};
use crate::harness::metrics::{median, mse};
use crate::harness::output::{format_number, write_run, write_table};
use crate::rng::run_seed;

/// Outcome of one estimator on one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub run: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// `None` when the run or the estimator failed.
    pub mse: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
    /// `(t, L1 distance to the reference)`.
    pub pdf_l1: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub algorithms: Vec<Algorithm>,
    pub runs: usize,
    /// Run-major, then in `algorithms` order.
    pub records: Vec<MetricsRecord>,
}

impl McReport {
    pub fn records_for(&self, a: Algorithm) -> impl Iterator<Item = &MetricsRecord> {
        self.records.iter().filter(move |r| r.algorithm == a)
    }

    /// Per-run MSE, `NaN` for failures.
    pub fn mse_series(&self, a: Algorithm) -> Vec<f64> {
        self.records_for(a).map(|r| r.mse.unwrap_or(f64::NAN)).collect()
    }

    pub fn median_mse(&self, a: Algorithm) -> f64 {
        median(&self.mse_series(a))
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }
}

fn request_for(exp: &Experiment, run: usize) -> Option<DensityRequest> {
    let g = &exp.config.grid;
    (run < g.runs && !g.times.is_empty()).then(|| DensityRequest {
        times: g.times.clone(),
        coordinate: g.coordinate - 1,
    })
}

fn records_of(exp: &Experiment, run: usize, seed: u64, result: &Result<RunResult>) -> Result<Vec<MetricsRecord>> {
    let algos = &exp.config.algorithms.enabled;
    let r = match result {
        Ok(r) => r,
        Err(e) => {
            return Ok(algos
                .iter()
                .map(|&a| MetricsRecord {
                    run,
                    seed,
                    algorithm: a,
                    mse: None,
                    seconds: 0.0,
                    error: Some(format!("simulation: {e}")),
                    pdf_l1: Vec::new(),
                })
                .collect())
        }
    };
    let g = &exp.config.grid;
    let distances = r.pdf_distances(g.fixed()?, g.points)?;
    let reference_error = match &r.reference {
        Some(Err(e)) => Some(format!("reference: {e}")),
        _ => None,
    };
    Ok(algos
        .iter()
        .map(|&a| match &r.runs[&a] {
            Ok(out) => MetricsRecord {
                run,
                seed,
                algorithm: a,
                mse: Some(mse(&r.trajectory.states, &out.means)),
                seconds: out.seconds,
                error: reference_error.clone(),
                pdf_l1: distances.iter().filter(|d| d.0 == a).map(|d| (d.1, d.2)).collect(),
            },
            Err(e) => MetricsRecord {
                run,
                seed,
                algorithm: a,
                mse: None,
                seconds: 0.0,
                error: Some(e.to_string()),
                pdf_l1: Vec::new(),
            },
        })
        .collect())
}

/// Runs `runs` realizations with `seed_i = seed ⊕ i`. Per-run failures are
/// recorded; only output errors abort. With `out`, each run writes
/// `run_XXXX/` and the aggregate tables go to `out`.
pub fn monte_carlo(exp: &Experiment, out: Option<&Path>) -> Result<McReport> {
    let c = &exp.config;
    let algos = c.algorithms.enabled.clone();
    let per_run: Vec<Result<Vec<MetricsRecord>>> = (0..c.runs)
        .into_par_iter()
        .map(|i| {
            let seed = run_seed(c.seed, i as u64);
            let request = request_for(exp, i);
            let result = run_realization(exp, i, seed, &algos, request.as_ref(), c.grid.ground_truth);
            if let (Some(dir), Ok(r)) = (out, &result) {
                write_run(&dir.join(format!("run_{i:04}")), exp, r)?;
            }
            records_of(exp, i, seed, &result)
        })
        .collect();
    let mut records = Vec::new();
    for r in per_run {
        records.extend(r?);
    }
    let report = McReport {
        algorithms: algos,
        runs: c.runs,
        records,
    };
    if let Some(dir) = out {
        write_report(dir, &report)?;
    }
    Ok(report)
}

/// `metrics.csv`, `pdf_distances.csv` and `summary.csv`.
pub fn write_report(dir: &Path, report: &McReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let metrics: Vec<Vec<String>> = report
        .records
        .iter()
        .map(|r| {
            vec![
                r.run.to_string(),
                r.seed.to_string(),
                r.algorithm.to_string(),
                r.mse.map(format_number).unwrap_or_default(),
                r.error.clone().unwrap_or_else(|| "ok".into()),
            ]
        })
        .collect();
    write_table(
        &dir.join("metrics.csv"),
        &["run", "seed", "algorithm", "mse", "status"],
        &metrics,
    )?;
    let distances: Vec<Vec<String>> = report
        .records
        .iter()
        .flat_map(|r| {
            r.pdf_l1.iter().map(move |(t, d)| {
                vec![
                    r.run.to_string(),
                    r.algorithm.to_string(),
                    t.to_string(),
                    format_number(*d),
                ]
            })
        })
        .collect();
    write_table(
        &dir.join("pdf_distances.csv"),
        &["run", "algorithm", "t", "l1"],
        &distances,
    )?;
    let summary: Vec<Vec<String>> = report
        .algorithms
        .iter()
        .map(|&a| {
            let ok: Vec<f64> = report.mse_series(a).into_iter().filter(|v| v.is_finite()).collect();
            let mean = if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().sum::<f64>() / ok.len() as f64
            };
            vec![
                a.to_string(),
                ok.len().to_string(),
                (report.runs - ok.len()).to_string(),
                format_number(median(&ok)),
                format_number(mean),
            ]
        })
        .collect();
    write_table(
        &dir.join("summary.csv"),
        &["algorithm", "completed", "failed", "median_mse", "mean_mse"],
        &summary,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;
    use crate::harness::output::{read_states, states_path};

    fn small(name: &str) -> Experiment {
        let mut c = ExperimentConfig::preset(name).unwrap();
        c.horizon = 20;
        c.runs = 4;
        c.seed = 11;
        c.algorithms.enabled = vec![Algorithm::Qgsf, Algorithm::Ekf, Algorithm::Eks];
        c.resolve().unwrap()
    }

    #[test]
    fn seeds_are_derived_by_xor() {
        let r = monte_carlo(&small("example1"), None).unwrap();
        assert_eq!(r.records.len(), 12);
        for rec in &r.records {
            assert_eq!(rec.seed, 11 ^ rec.run as u64);
            assert!(rec.mse.unwrap().is_finite());
        }
    }

    #[test]
    fn report_is_deterministic() {
        let e = small("example2");
        let a = monte_carlo(&e, None).unwrap();
        let b = monte_carlo(&e, None).unwrap();
        assert_eq!(a.mse_series(Algorithm::Qgsf), b.mse_series(Algorithm::Qgsf));
        assert_eq!(a.mse_series(Algorithm::Eks), b.mse_series(Algorithm::Eks));
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let mut e = small("example1");
        // a zero-variance output noise is fine to simulate but not to filter
        e.model.p = 0.0;
        let r = monte_carlo(&e, None).unwrap();
        assert!(r.failures() >= 4);
        assert_eq!(r.records.len(), 12);
        assert!(r
            .records_for(Algorithm::Qgsf)
            .all(|x| x.mse.is_none() && x.error.is_some()));
        assert!(r.median_mse(Algorithm::Qgsf).is_nan());
    }

    #[test]
    fn metrics_recompute_from_state_files() {
        let dir = tempfile::tempdir().unwrap();
        let e = small("example2");
        let r = monte_carlo(&e, Some(dir.path())).unwrap();
        for rec in &r.records {
            let s = read_states(&states_path(
                &dir.path().join(format!("run_{:04}", rec.run)),
                rec.algorithm,
            ))
            .unwrap();
            assert_eq!(mse(&s.truth, &s.means), rec.mse.unwrap());
        }
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(text.starts_with("run,seed,algorithm,mse,status\n0,11,qgsf,"));
    }
}
