//! Estimation-error and density-distance metrics.

use nalgebra::DVector;

use crate::baselines::particle::kde_on_grid;
use crate::error::{Error, Result};
use crate::gauss::{normal_pdf, GaussianMixture};
use crate::harness::config::Grid;

/// Mean over `t` of the squared Euclidean error. Sums run in `t`, then
/// coordinate order, so a recomputation from emitted values is bit-exact.
///
/// # Panics
/// When the sequences differ in length or dimension.
pub fn mse(truth: &[DVector<f64>], estimates: &[DVector<f64>]) -> f64 {
    assert_eq!(truth.len(), estimates.len(), "mse needs equal lengths");
    if truth.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (x, e) in truth.iter().zip(estimates) {
        assert_eq!(x.len(), e.len(), "mse needs equal dimensions");
        let mut s = 0.0;
        for k in 0..x.len() {
            let d = x[k] - e[k];
            s += d * d;
        }
        total += s;
    }
    total / truth.len() as f64
}

/// Density values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub grid: Grid,
    pub values: Vec<f64>,
}

/// `Σ |a − b| · h`; symmetric, and an error unless both share one grid.
pub fn pdf_distance(a: &GridDensity, b: &GridDensity) -> Result<f64> {
    if a.grid != b.grid || a.values.len() != a.grid.points || b.values.len() != b.grid.points {
        return Err(Error::MismatchedGrids);
    }
    let h = a.grid.step();
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() * h)
}

/// A one-dimensional marginal posterior in whichever form an estimator
/// produces.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalDensity {
    Mixture(GaussianMixture),
    Normal {
        mean: f64,
        var: f64,
    },
    /// Equally weighted samples, smoothed by a Silverman-bandwidth KDE.
    Samples(Vec<f64>),
}

impl MarginalDensity {
    pub fn evaluate(&self, grid: &Grid) -> GridDensity {
        let nodes = grid.nodes();
        let values = match self {
            MarginalDensity::Mixture(m) => nodes.iter().map(|&x| m.marginal_pdf(0, x)).collect(),
            MarginalDensity::Normal { mean, var } => nodes.iter().map(|&x| normal_pdf(x, *mean, *var)).collect(),
            MarginalDensity::Samples(s) => kde_on_grid(s, &nodes),
        };
        GridDensity { grid: *grid, values }
    }

    /// `(mean, variance)`.
    pub fn moments(&self) -> (f64, f64) {
        match self {
            MarginalDensity::Mixture(m) => {
                let total: f64 = m.components().iter().map(|c| c.log_weight.exp()).sum();
                let mean = m
                    .components()
                    .iter()
                    .map(|c| c.log_weight.exp() * c.gaussian.mean[0])
                    .sum::<f64>()
                    / total;
                let second = m
                    .components()
                    .iter()
                    .map(|c| c.log_weight.exp() * (c.gaussian.cov[(0, 0)] + c.gaussian.mean[0].powi(2)))
                    .sum::<f64>()
                    / total;
                (mean, (second - mean * mean).max(0.0))
            }
            MarginalDensity::Normal { mean, var } => (*mean, *var),
            MarginalDensity::Samples(s) => {
                let n = s.len() as f64;
                let mean = s.iter().sum::<f64>() / n;
                (mean, s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
            }
        }
    }
}

/// Grid points used when no grid is configured.
pub const DEFAULT_GRID_POINTS: usize = 400;
/// Half-width of the default grid in reference standard deviations.
pub const DEFAULT_GRID_HALF_WIDTH: f64 = 5.0;

/// `mean ± 5 sd` of the reference density.
pub fn default_grid(reference: &MarginalDensity, points: usize) -> Result<Grid> {
    let (m, v) = reference.moments();
    let sd = v.sqrt().max(1e-6);
    Grid::new(
        m - DEFAULT_GRID_HALF_WIDTH * sd,
        m + DEFAULT_GRID_HALF_WIDTH * sd,
        points,
    )
}

/// Median of finite values; `NaN` when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
