//! Bootstrap particle filter with systematic resampling, a
//! backward-simulation particle smoother, and kernel density estimates of
//! particle marginals.
//!
//! Weights use `p(y | x)` evaluated directly (an 80-point rule over `r`),
//! not the pseudo-measurement mixture, so particle results are an
//! independent check on the Gaussian-sum recursions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::likelihood::DirectLikelihood;
use crate::linalg::{log_sum_exp, Chol};
use crate::model::WienerModel;
use crate::nonlinearity::PiecewiseNonlinearity;
use crate::rng;
use crate::simulate::psd_sqrt;

/// Particle count of the reference posterior.
pub const GROUND_TRUTH_PARTICLES: usize = 20_000;

/// Backward-simulation proposals tried before falling back to the exact
/// categorical draw.
const REJECTION_TRIES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub particles: Vec<DVector<f64>>,
    /// Normalized: `log_sum_exp = 0`.
    pub log_weights: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.particles[0].len());
        for (p, w) in self.particles.iter().zip(self.weights()) {
            m.axpy(w, p, 1.0);
        }
        m
    }

    pub fn cov(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let n = mean.len();
        let mut c = DMatrix::zeros(n, n);
        for (p, w) in self.particles.iter().zip(self.weights()) {
            let d = p - &mean;
            c += &d * d.transpose() * w;
        }
        c
    }

    /// Coordinate `i` of an equally weighted systematic resample, with the
    /// fixed offset ½ so the result needs no random stream.
    pub fn resampled_coordinate(&self, i: usize) -> Vec<f64> {
        systematic_resample(&self.weights(), 0.5)
            .into_iter()
            .map(|k| self.particles[k][i])
            .collect()
    }
}

/// Indices drawn by systematic resampling with offset `u0 ∈ (0, 1)`.
/// `weights` must sum to 1 (up to rounding).
pub fn systematic_resample(weights: &[f64], u0: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut i = 0;
    for k in 0..n {
        let target = (k as f64 + u0) / n as f64;
        while cum < target && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleFilterOutput {
    /// Weighted ensembles before resampling, one per `t`.
    pub ensembles: Vec<ParticleEnsemble>,
    pub seed: u64,
}

impl ParticleFilterOutput {
    pub fn means(&self) -> Vec<DVector<f64>> {
        self.ensembles.iter().map(|e| e.mean()).collect()
    }
}

pub fn particle_filter(
    model: &WienerModel,
    nl: &PiecewiseNonlinearity,
    y: &[f64],
    u: &[DVector<f64>],
    n_particles: usize,
    seed: u64,
) -> Result<ParticleFilterOutput> {
    if n_particles < 2 {
        return Err(Error::Config(format!(
            "particle filter needs at least 2 particles, got {n_particles}"
        )));
    }
    if y.len() != u.len() || y.is_empty() {
        return Err(Error::Dimension(format!(
            "{} measurements, {} inputs",
            y.len(),
            u.len()
        )));
    }
    model.validate()?;
    let lik = DirectLikelihood::new(model, nl)?;
    let n = model.n();
    let sq = psd_sqrt(&model.q);
    let sp1 = psd_sqrt(&model.p1);
    let mut ensembles = Vec::with_capacity(y.len());
    let mut particles: Vec<DVector<f64>> = Vec::new();
    for t in 0..y.len() {
        let mut g = rng::stream(seed, rng::STREAM_PARTICLE_BASE + t as u64 + 1);
        let noise = |g: &mut rand_chacha::ChaCha8Rng| DVector::from_fn(n, |_, _| g.sample::<f64, _>(StandardNormal));
        particles = if t == 0 {
            (0..n_particles).map(|_| &model.mu1 + &sp1 * noise(&mut g)).collect()
        } else {
            let xi: Vec<DVector<f64>> = (0..n_particles).map(|_| noise(&mut g)).collect();
            particles
                .par_iter()
                .zip(xi.par_iter())
                .map(|(x, e)| &model.a * x + &model.b * &u[t - 1] + &sq * e)
                .collect()
        };
        let du = (&model.d * &u[t])[0];
        let raw: Vec<f64> = particles
            .par_iter()
            .map(|x| lik.log_eval(y[t], (&model.c * x)[0] + du))
            .collect();
        let total = log_sum_exp(raw.iter().copied());
        if !total.is_finite() {
            return Err(Error::ParticleDegeneracy.at(t + 1));
        }
        let log_weights: Vec<f64> = raw.iter().map(|l| l - total).collect();
        let ens = ParticleEnsemble { particles, log_weights };
        let idx = systematic_resample(&ens.weights(), g.random::<f64>());
        particles = idx.iter().map(|&i| ens.particles[i].clone()).collect();
        ensembles.push(ens);
    }
    Ok(ParticleFilterOutput { ensembles, seed })
}

/// The reference posterior: the particle filter at 2·10⁴ particles.
pub fn ground_truth_filter(
    model: &WienerModel,
    nl: &PiecewiseNonlinearity,
    y: &[f64],
    u: &[DVector<f64>],
    seed: u64,
) -> Result<ParticleFilterOutput> {
    particle_filter(model, nl, y, u, GROUND_TRUTH_PARTICLES, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSmootherOutput {
    /// Equally weighted smoothed samples per `t`; sample `j` across `t` is
    /// one trajectory.
    pub samples: Vec<Vec<DVector<f64>>>,
}

impl ParticleSmootherOutput {
    pub fn means(&self) -> Vec<DVector<f64>> {
        self.samples
            .iter()
            .map(|s| {
                let mut m = DVector::zeros(s[0].len());
                for x in s {
                    m += x;
                }
                m / s.len() as f64
            })
            .collect()
    }

    pub fn coordinate(&self, t: usize, i: usize) -> Vec<f64> {
        self.samples[t].iter().map(|x| x[i]).collect()
    }
}

fn draw_index(cdf: &[f64], v: f64) -> usize {
    cdf.partition_point(|c| *c < v).min(cdf.len() - 1)
}

/// Backward simulation over the stored forward ensembles. Each step
/// proposes from the filter weights and accepts with probability
/// `f(x_{t+1} | x_t) / max f`; after a fixed number of rejections the exact
/// categorical draw is used.
pub fn particle_smoother(
    pf: &ParticleFilterOutput,
    model: &WienerModel,
    u: &[DVector<f64>],
    n_trajectories: usize,
) -> Result<ParticleSmootherOutput> {
    let n_steps = pf.ensembles.len();
    if n_trajectories == 0 || u.len() != n_steps {
        return Err(Error::Dimension(
            "smoother needs trajectories and one input per step".into(),
        ));
    }
    let cdfs: Vec<Vec<f64>> = pf
        .ensembles
        .iter()
        .map(|e| {
            let mut acc = 0.0;
            e.weights()
                .into_iter()
                .map(|w| {
                    acc += w;
                    acc
                })
                .collect()
        })
        .collect();
    let last = n_steps - 1;
    let mut g = rng::stream(pf.seed, rng::STREAM_SMOOTHER_BASE + n_steps as u64);
    let mut current: Vec<DVector<f64>> = (0..n_trajectories)
        .map(|_| {
            let v = g.random::<f64>() * cdfs[last][cdfs[last].len() - 1];
            pf.ensembles[last].particles[draw_index(&cdfs[last], v)].clone()
        })
        .collect();
    let mut samples = vec![Vec::new(); n_steps];
    samples[last] = current.clone();
    if n_steps == 1 {
        return Ok(ParticleSmootherOutput { samples });
    }
    let qc = Chol::new(&model.q).map_err(|pivot| Error::DegenerateCovariance { pivot })?;
    for t in (0..last).rev() {
        let ens = &pf.ensembles[t];
        let cdf = &cdfs[t];
        let top = cdf[cdf.len() - 1];
        let bu = &model.b * &u[t];
        let log_trans = |x_next: &DVector<f64>, x: &DVector<f64>| -0.5 * qc.mahalanobis(&(x_next - &model.a * x - &bu));
        let mut g = rng::stream(pf.seed, rng::STREAM_SMOOTHER_BASE + t as u64 + 1);
        let mut next = Vec::with_capacity(n_trajectories);
        for x_next in &current {
            let mut chosen = None;
            for _ in 0..REJECTION_TRIES {
                let i = draw_index(cdf, g.random::<f64>() * top);
                if g.random::<f64>().ln() <= log_trans(x_next, &ens.particles[i]) {
                    chosen = Some(i);
                    break;
                }
            }
            let i = match chosen {
                Some(i) => i,
                None => {
                    let lw: Vec<f64> = ens
                        .particles
                        .iter()
                        .zip(&ens.log_weights)
                        .map(|(x, l)| l + log_trans(x_next, x))
                        .collect();
                    let total = log_sum_exp(lw.iter().copied());
                    if !total.is_finite() {
                        return Err(Error::ParticleDegeneracy.at(t + 1));
                    }
                    let mut acc = 0.0;
                    let c: Vec<f64> = lw
                        .iter()
                        .map(|l| {
                            acc += (l - total).exp();
                            acc
                        })
                        .collect();
                    draw_index(&c, g.random::<f64>() * acc)
                }
            };
            next.push(ens.particles[i].clone());
        }
        samples[t] = next.clone();
        current = next;
    }
    Ok(ParticleSmootherOutput { samples })
}

/// Silverman's rule: `0.9 · min(sd, IQR/1.34) · n^{−1/5}`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-6 * (1.0 + mean.abs())
    }
}

/// Gaussian KDE of equally weighted samples on `grid`.
pub fn kde_on_grid(samples: &[f64], grid: &[f64]) -> Vec<f64> {
    let h = silverman_bandwidth(samples);
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.par_iter()
        .map(|x| {
            samples
                .iter()
                .map(|s| {
                    let z = (x - s) / h;
                    if z.abs() < 40.0 {
                        (-0.5 * z * z).exp()
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}
