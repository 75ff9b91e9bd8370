//! One realization pushed through every enabled estimator.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DVector;

use crate::backward;
use crate::baselines::extended::{build_extended_system, ekf, eks};
use crate::baselines::particle::{particle_filter, particle_smoother, ParticleSmootherOutput};
use crate::error::{Error, Result};
use crate::gauss::{mixture_moments, Gaussian, GaussianMixture};
use crate::harness::config::{Algorithm, Experiment, Grid};
use crate::harness::metrics::{default_grid, pdf_distance, MarginalDensity, DEFAULT_GRID_HALF_WIDTH};
use crate::qgsf;
use crate::qgss::{self, SmootherOptions};
use crate::simulate::{simulate, Trajectory};

/// The reference particle methods use a seed decorrelated from the
/// estimators' own particle streams.
pub const GROUND_TRUTH_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Which marginals to keep: 1-based times, 0-based coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRequest {
    pub times: Vec<usize>,
    pub coordinate: usize,
}

/// Point estimates and selected marginals of one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmRun {
    pub algorithm: Algorithm,
    pub means: Vec<DVector<f64>>,
    /// Marginal variances per coordinate.
    pub variances: Vec<DVector<f64>>,
    /// Wall-clock including any shared filter pass the estimator needs.
    pub seconds: f64,
    pub marginals: BTreeMap<usize, MarginalDensity>,
}

/// Reference marginals from the large particle filter and smoother.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub filter: BTreeMap<usize, MarginalDensity>,
    pub smoother: BTreeMap<usize, MarginalDensity>,
}

impl Reference {
    pub fn for_algorithm(&self, a: Algorithm) -> &BTreeMap<usize, MarginalDensity> {
        if a.is_smoother() {
            &self.smoother
        } else {
            &self.filter
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub index: usize,
    pub seed: u64,
    pub trajectory: Trajectory,
    pub runs: BTreeMap<Algorithm, std::result::Result<AlgorithmRun, Error>>,
    pub reference: Option<std::result::Result<Reference, Error>>,
}

fn diag(g: &Gaussian, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| g.cov[(i, i)])
}

fn from_mixtures<'a>(
    algorithm: Algorithm,
    mixtures: impl Iterator<Item = &'a GaussianMixture>,
    seconds: f64,
    request: Option<&DensityRequest>,
) -> Result<AlgorithmRun> {
    let mut run = AlgorithmRun {
        algorithm,
        means: Vec::new(),
        variances: Vec::new(),
        seconds,
        marginals: BTreeMap::new(),
    };
    for (i, m) in mixtures.enumerate() {
        let g = mixture_moments(m)?;
        run.variances.push(diag(&g, g.dim()));
        run.means.push(g.mean);
        if let Some(r) = request.filter(|r| r.times.contains(&(i + 1))) {
            run.marginals
                .insert(i + 1, MarginalDensity::Mixture(m.marginal(r.coordinate, 1)));
        }
    }
    Ok(run)
}

fn from_gaussians<'a>(
    algorithm: Algorithm,
    gaussians: impl Iterator<Item = &'a Gaussian>,
    n: usize,
    seconds: f64,
    request: Option<&DensityRequest>,
) -> AlgorithmRun {
    let mut run = AlgorithmRun {
        algorithm,
        means: Vec::new(),
        variances: Vec::new(),
        seconds,
        marginals: BTreeMap::new(),
    };
    for (i, g) in gaussians.enumerate() {
        run.means.push(g.mean.rows(0, n).into_owned());
        run.variances.push(diag(g, n));
        if let Some(r) = request.filter(|r| r.times.contains(&(i + 1))) {
            let c = r.coordinate;
            run.marginals.insert(
                i + 1,
                MarginalDensity::Normal {
                    mean: g.mean[c],
                    var: g.cov[(c, c)],
                },
            );
        }
    }
    run
}

fn from_smoothed_samples(ps: &ParticleSmootherOutput, seconds: f64, request: Option<&DensityRequest>) -> AlgorithmRun {
    let means = ps.means();
    let variances = ps
        .samples
        .iter()
        .zip(&means)
        .map(|(s, m)| {
            let mut v = DVector::zeros(m.len());
            for x in s {
                let d = x - m;
                v += d.component_mul(&d);
            }
            v / s.len() as f64
        })
        .collect();
    let mut marginals = BTreeMap::new();
    if let Some(r) = request {
        for &t in &r.times {
            marginals.insert(t, MarginalDensity::Samples(ps.coordinate(t - 1, r.coordinate)));
        }
    }
    AlgorithmRun {
        algorithm: Algorithm::Ps,
        means,
        variances,
        seconds,
        marginals,
    }
}

/// Runs `algorithms` on one trajectory. A filter pass shared by a filter and
/// its smoother is computed once and charged to both.
pub fn run_algorithms(
    exp: &Experiment,
    traj: &Trajectory,
    algorithms: &[Algorithm],
    request: Option<&DensityRequest>,
) -> BTreeMap<Algorithm, std::result::Result<AlgorithmRun, Error>> {
    let (model, nl, cfg) = (&exp.model, &exp.nl, &exp.config.algorithms);
    let (y, u) = (&traj.measurements, &traj.inputs);
    let want = |a: Algorithm| algorithms.contains(&a);
    let mut out = BTreeMap::new();
    let n = model.n();

    if want(Algorithm::Qgsf) || want(Algorithm::Qgss) {
        let opts = cfg.filter_options();
        let start = Instant::now();
        let filtered = qgsf::run_filter(model, nl, y, u, &opts);
        let t_filter = start.elapsed().as_secs_f64();
        match filtered {
            Ok(f) => {
                if want(Algorithm::Qgsf) {
                    let run = from_mixtures(Algorithm::Qgsf, f.states.iter().map(|s| &s.filtered), t_filter, request);
                    out.insert(Algorithm::Qgsf, run);
                }
                if want(Algorithm::Qgss) {
                    let start = Instant::now();
                    let smoothed = backward::run_backward(model, nl, y, u, &opts).and_then(|b| {
                        let so = SmootherOptions {
                            max_components: opts.max_components,
                            reduce_joint: false,
                        };
                        qgss::run_smoother(&f, &b, model, u, &so)
                    });
                    let secs = t_filter + start.elapsed().as_secs_f64();
                    let run = smoothed.and_then(|s| {
                        from_mixtures(Algorithm::Qgss, s.marginals.iter().map(|m| &m.posterior), secs, request)
                    });
                    out.insert(Algorithm::Qgss, run);
                }
            }
            Err(e) => {
                for a in [Algorithm::Qgsf, Algorithm::Qgss].into_iter().filter(|&a| want(a)) {
                    out.insert(a, Err(e.clone()));
                }
            }
        }
    }

    if want(Algorithm::Ekf) || want(Algorithm::Eks) {
        let ext = build_extended_system(model);
        let start = Instant::now();
        let filtered = ekf(&ext, nl, y, u);
        let t_filter = start.elapsed().as_secs_f64();
        match filtered {
            Ok(f) => {
                if want(Algorithm::Ekf) {
                    let run = from_gaussians(
                        Algorithm::Ekf,
                        f.inner.steps.iter().map(|s| &s.filtered),
                        n,
                        t_filter,
                        request,
                    );
                    out.insert(Algorithm::Ekf, Ok(run));
                }
                if want(Algorithm::Eks) {
                    let start = Instant::now();
                    let smoothed = eks(&ext, &f);
                    let secs = t_filter + start.elapsed().as_secs_f64();
                    let run = smoothed.map(|s| from_gaussians(Algorithm::Eks, s.smoothed.iter(), n, secs, request));
                    out.insert(Algorithm::Eks, run);
                }
            }
            Err(e) => {
                for a in [Algorithm::Ekf, Algorithm::Eks].into_iter().filter(|&a| want(a)) {
                    out.insert(a, Err(e.clone()));
                }
            }
        }
    }

    if want(Algorithm::Pf) || want(Algorithm::Ps) {
        let start = Instant::now();
        let filtered = particle_filter(model, nl, y, u, cfg.particles, traj.seed);
        let t_filter = start.elapsed().as_secs_f64();
        match filtered {
            Ok(pf) => {
                if want(Algorithm::Pf) {
                    let mut run = AlgorithmRun {
                        algorithm: Algorithm::Pf,
                        means: Vec::new(),
                        variances: Vec::new(),
                        seconds: t_filter,
                        marginals: BTreeMap::new(),
                    };
                    for (i, e) in pf.ensembles.iter().enumerate() {
                        let m = e.mean();
                        let c = e.cov();
                        run.variances.push(DVector::from_fn(n, |k, _| c[(k, k)]));
                        run.means.push(m);
                        if let Some(r) = request.filter(|r| r.times.contains(&(i + 1))) {
                            run.marginals
                                .insert(i + 1, MarginalDensity::Samples(e.resampled_coordinate(r.coordinate)));
                        }
                    }
                    out.insert(Algorithm::Pf, Ok(run));
                }
                if want(Algorithm::Ps) {
                    let start = Instant::now();
                    let smoothed = particle_smoother(&pf, model, u, cfg.smoother_trajectories);
                    let secs = t_filter + start.elapsed().as_secs_f64();
                    out.insert(
                        Algorithm::Ps,
                        smoothed.map(|s| from_smoothed_samples(&s, secs, request)),
                    );
                }
            }
            Err(e) => {
                for a in [Algorithm::Pf, Algorithm::Ps].into_iter().filter(|&a| want(a)) {
                    out.insert(a, Err(e.clone()));
                }
            }
        }
    }
    out
}

/// Reference marginals at the requested times.
pub fn ground_truth(exp: &Experiment, traj: &Trajectory, request: &DensityRequest) -> Result<Reference> {
    let cfg = &exp.config.algorithms;
    let (y, u) = (&traj.measurements, &traj.inputs);
    let seed = traj.seed ^ GROUND_TRUTH_SALT;
    let pf = particle_filter(&exp.model, &exp.nl, y, u, cfg.ground_truth_particles, seed)?;
    let ps = particle_smoother(&pf, &exp.model, u, cfg.ground_truth_trajectories)?;
    let c = request.coordinate;
    let mut r = Reference {
        filter: BTreeMap::new(),
        smoother: BTreeMap::new(),
    };
    for &t in &request.times {
        r.filter
            .insert(t, MarginalDensity::Samples(pf.ensembles[t - 1].resampled_coordinate(c)));
        r.smoother.insert(t, MarginalDensity::Samples(ps.coordinate(t - 1, c)));
    }
    Ok(r)
}

/// Simulates realization `index` with `seed` and runs everything.
pub fn run_realization(
    exp: &Experiment,
    index: usize,
    seed: u64,
    algorithms: &[Algorithm],
    request: Option<&DensityRequest>,
    with_ground_truth: bool,
) -> Result<RunResult> {
    let c = &exp.config;
    let trajectory = simulate(&exp.model, &exp.nl, c.horizon, &exp.input_spec(), seed)?;
    let runs = run_algorithms(exp, &trajectory, algorithms, request);
    let reference = match request {
        Some(r) if with_ground_truth => Some(ground_truth(exp, &trajectory, r)),
        _ => None,
    };
    Ok(RunResult {
        index,
        seed,
        trajectory,
        runs,
        reference,
    })
}

impl RunResult {
    /// The grid shared by every density at time `t`: the fixed grid when
    /// given, otherwise the union of `mean ± 5 sd` over the reference
    /// marginals (or over the estimators' marginals without a reference).
    pub fn grid_at(&self, t: usize, fixed: Option<Grid>, points: usize) -> Result<Grid> {
        if let Some(g) = fixed {
            return Ok(g);
        }
        let mut densities: Vec<&MarginalDensity> = Vec::new();
        if let Some(Ok(r)) = &self.reference {
            densities.extend(r.filter.get(&t));
            densities.extend(r.smoother.get(&t));
        }
        if densities.is_empty() {
            densities.extend(self.runs.values().flatten().filter_map(|r| r.marginals.get(&t)));
        }
        let mut bounds: Option<(f64, f64)> = None;
        for d in densities {
            let g = default_grid(d, points)?;
            bounds = Some(match bounds {
                None => (g.lo, g.hi),
                Some((lo, hi)) => (lo.min(g.lo), hi.max(g.hi)),
            });
        }
        let (lo, hi) = bounds.ok_or_else(|| {
            Error::Config(format!(
                "no density at t = {t} to place a ±{DEFAULT_GRID_HALF_WIDTH} sd grid"
            ))
        })?;
        Grid::new(lo, hi, points)
    }

    /// Grid L1 distance of each estimator's marginal to the reference, per
    /// requested time, in `(algorithm, t)` order.
    pub fn pdf_distances(&self, fixed: Option<Grid>, points: usize) -> Result<Vec<(Algorithm, usize, f64)>> {
        let Some(Ok(reference)) = &self.reference else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        for (a, run) in &self.runs {
            let Ok(run) = run else { continue };
            for (&t, d) in &run.marginals {
                let Some(gt) = reference.for_algorithm(*a).get(&t) else {
                    continue;
                };
                let g = self.grid_at(t, fixed, points)?;
                out.push((*a, t, pdf_distance(&d.evaluate(&g), &gt.evaluate(&g))?));
            }
        }
        Ok(out)
    }
}
