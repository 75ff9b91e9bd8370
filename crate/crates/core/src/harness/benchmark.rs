//! Wall-clock comparison of the estimators.
//!
//! Each run simulates one realization and times every enabled estimator on
//! it in turn, sequentially and on its own (a smoother's time includes its
//! filter pass). Medians over runs are reported with ratios, which are the
//! hardware-independent quantity.

use std::fmt;

use crate::error::{Error, Result};
use crate::harness::config::{Algorithm, Experiment};
use crate::harness::experiment::run_algorithms;
use crate::harness::metrics::median;
use crate::rng::run_seed;
use crate::simulate::simulate;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub algorithm: Algorithm,
    pub median_seconds: f64,
    /// Median divided by the baseline row's median.
    pub ratio: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    pub baseline: Algorithm,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    pub fn row(&self, a: Algorithm) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.algorithm == a)
    }

    /// `median(a) / median(b)`.
    pub fn ratio(&self, a: Algorithm, b: Algorithm) -> Option<f64> {
        Some(self.row(a)?.median_seconds / self.row(b)?.median_seconds)
    }
}

impl fmt::Display for BenchmarkTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:>16} {:>12}",
            "algorithm",
            "median_seconds",
            format!("vs_{}", self.baseline)
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:>16.6} {:>12.4}",
                r.algorithm.name(),
                r.median_seconds,
                r.ratio
            )?;
        }
        Ok(())
    }
}

/// Times the enabled estimators over `runs` realizations.
pub fn benchmark(exp: &Experiment) -> Result<BenchmarkTable> {
    let c = &exp.config;
    let algos = &c.algorithms.enabled;
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); algos.len()];
    for i in 0..c.runs {
        let seed = run_seed(c.seed, i as u64);
        let traj = simulate(&exp.model, &exp.nl, c.horizon, &exp.input_spec(), seed)?;
        for (k, &a) in algos.iter().enumerate() {
            let mut out = run_algorithms(exp, &traj, &[a], None);
            let run = out.remove(&a).expect("requested estimator always reports");
            samples[k].push(
                run.map_err(|e| Error::Config(format!("{a} failed in run {i}: {e}")))?
                    .seconds,
            );
        }
    }
    let baseline = if algos.contains(&Algorithm::Qgsf) {
        Algorithm::Qgsf
    } else {
        algos[0]
    };
    let base = median(&samples[algos.iter().position(|&a| a == baseline).unwrap()]);
    let rows = algos
        .iter()
        .zip(samples)
        .map(|(&a, s)| {
            let m = median(&s);
            BenchmarkRow {
                algorithm: a,
                median_seconds: m,
                ratio: m / base,
                samples: s,
            }
        })
        .collect();
    Ok(BenchmarkTable { baseline, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;

    #[test]
    fn disabled_algorithms_are_omitted() {
        let mut c = ExperimentConfig::preset("example1").unwrap();
        c.horizon = 10;
        c.runs = 3;
        c.algorithms.enabled = vec![Algorithm::Ekf, Algorithm::Qgsf];
        let t = benchmark(&c.resolve().unwrap()).unwrap();
        assert_eq!(t.baseline, Algorithm::Qgsf);
        assert_eq!(t.rows.len(), 2);
        assert!(t.row(Algorithm::Pf).is_none());
        assert_eq!(t.row(Algorithm::Qgsf).unwrap().ratio, 1.0);
        assert!(t.rows.iter().all(|r| r.samples.len() == 3 && r.median_seconds > 0.0));
        let text = t.to_string();
        assert!(text.lines().count() == 3 && text.contains("vs_qgsf"));
    }
}
