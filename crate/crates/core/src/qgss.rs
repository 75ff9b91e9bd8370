//! Two-filter smoother: the forward prediction mixture combined with the
//! backward likelihood gives `p(x_t | y_{1:N})`, and the filtered mixture,
//! the dynamics and the backward likelihood at `t+1` give the joint
//! `p(x_{t+1}, x_t | y_{1:N})`.
//!
//! Component order is ℓ-major (backward component), τ-minor (forward
//! component) in both cases.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::backward::{stack_inputs, BackwardOutput, BackwardState};
use crate::error::{Error, Result};
use crate::gauss::{mixture_moments, Gaussian, GaussianMixture, LinearConditioner, WeightedGaussian};
use crate::linalg::{self, Chol};
use crate::model::WienerModel;
use crate::qgsf::{time_update, FilterOutput};
use crate::reduction::reduce_by_joining;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherOptions {
    pub max_components: usize,
    /// Joint mixtures are kept exact unless this is set.
    pub reduce_joint: bool,
}

impl Default for SmootherOptions {
    fn default() -> Self {
        SmootherOptions {
            max_components: 10,
            reduce_joint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedState {
    pub t: usize,
    /// `p(x_t | y_{1:N})`, normalized.
    pub posterior: GaussianMixture,
}

impl SmoothedState {
    pub fn estimate(&self) -> Gaussian {
        mixture_moments(&self.posterior).expect("smoothed mixtures are normalized")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSmoothedState {
    pub t: usize,
    /// `p(x_{t+1}, x_t | y_{1:N})` over `[x_{t+1}; x_t]`, normalized.
    pub posterior: GaussianMixture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherOutput {
    pub marginals: Vec<SmoothedState>,
    /// One entry per `t = 1..=N`; the last is the `x_{N+1}` extension.
    pub joints: Vec<JointSmoothedState>,
}

impl SmootherOutput {
    pub fn means(&self) -> Vec<DVector<f64>> {
        self.marginals.iter().map(|s| s.estimate().mean).collect()
    }
}

/// Unnormalized two-filter components, ℓ-major.
fn combine(
    predicted: &GaussianMixture,
    backward: &BackwardState,
    u_stack: &DVector<f64>,
) -> Result<Vec<WeightedGaussian>> {
    if predicted.is_empty() || backward.is_empty() {
        return Err(Error::EmptyMixture);
    }
    let offset = &backward.h * u_stack;
    let m = predicted.len();
    // one conditioner per (distinct P, τ)
    let mut keys: Vec<*const DMatrix<f64>> = Vec::new();
    let mut slot = Vec::with_capacity(backward.len());
    let mut unique: Vec<Arc<DMatrix<f64>>> = Vec::new();
    for c in &backward.components {
        let key = Arc::as_ptr(&c.p);
        match keys.iter().position(|k| *k == key) {
            Some(i) => slot.push(i),
            None => {
                keys.push(key);
                unique.push(c.p.clone());
                slot.push(unique.len() - 1);
            }
        }
    }
    let conditioners: Vec<LinearConditioner> = (0..unique.len() * m)
        .into_par_iter()
        .map(|i| {
            let (p, tau) = (i / m, i % m);
            LinearConditioner::new(&predicted.components()[tau].gaussian, &backward.o, &unique[p])
        })
        .collect::<Result<_>>()?;
    Ok((0..backward.len() * m)
        .into_par_iter()
        .map(|k| {
            let (ell, tau) = (k / m, k % m);
            let b = &backward.components[ell];
            let (g, ev) = conditioners[slot[ell] * m + tau].apply(&b.zeta, &offset);
            WeightedGaussian::new(predicted.components()[tau].log_weight + b.log_weight + ev, g)
        })
        .collect())
}

fn normalized(comps: Vec<WeightedGaussian>) -> Result<GaussianMixture> {
    let mut mix = GaussianMixture::new(comps);
    let total = mix.normalize()?;
    if !total.is_finite() {
        return Err(Error::Unnormalized { total });
    }
    Ok(mix)
}

/// `p(x_t | y_{1:N}) ∝ p(x_t | y_{1:t−1}) p(y_{t:N} | x_t)`, unreduced.
/// `u_stack` is `[u_t; …; u_N]`.
pub fn smooth_at(
    t: usize,
    predicted: &GaussianMixture,
    backward: &BackwardState,
    u_stack: &DVector<f64>,
) -> Result<SmoothedState> {
    if backward.t != t {
        return Err(Error::Dimension(format!(
            "backward state is for t = {}, expected {t}",
            backward.t
        )));
    }
    Ok(SmoothedState {
        t,
        posterior: normalized(combine(predicted, backward, u_stack)?)?,
    })
}

/// `p(x_{t+1}, x_t | y_{1:N})` from the filtered mixture at `t` and the
/// backward likelihood `p(y_{t+1:N} | x_{t+1})`. The smoothed marginal at
/// `t+1` is rebuilt internally from the time update of `filtered`, so the
/// joint's `x_{t+1}` marginal is exactly that smoothed mixture.
pub fn joint_smooth_at(
    t: usize,
    filtered: &GaussianMixture,
    backward_next: &BackwardState,
    model: &WienerModel,
    u_t: &DVector<f64>,
    u_stack_next: &DVector<f64>,
) -> Result<JointSmoothedState> {
    if backward_next.t != t + 1 {
        return Err(Error::Dimension(format!(
            "backward state is for t = {}, expected {}",
            backward_next.t,
            t + 1
        )));
    }
    let predicted = time_update(filtered, model, u_t);
    let gains = reverse_gains(filtered, &predicted, model)?;
    let smoothed_next = combine(&predicted, backward_next, u_stack_next)?;
    let m = filtered.len();
    let comps = smoothed_next
        .into_par_iter()
        .enumerate()
        .map(|(k, s)| {
            let tau = k % m;
            let f = &filtered.components()[tau].gaussian;
            let p = &predicted.components()[tau].gaussian;
            stack_joint(s.log_weight, &s.gaussian, f, p, &gains[tau])
        })
        .collect();
    Ok(JointSmoothedState {
        t,
        posterior: normalized(comps)?,
    })
}

/// `K_τ = Σ_{t|t} Aᵀ (Q + A Σ_{t|t} Aᵀ)⁻¹`, by a solve against the
/// predicted covariance.
fn reverse_gains(
    filtered: &GaussianMixture,
    predicted: &GaussianMixture,
    model: &WienerModel,
) -> Result<Vec<DMatrix<f64>>> {
    filtered
        .components()
        .par_iter()
        .zip(predicted.components().par_iter())
        .map(|(f, p)| {
            let ch = Chol::new(&p.gaussian.cov).map_err(|pivot| Error::DegenerateCovariance { pivot })?;
            let sat = &f.gaussian.cov * model.a.transpose();
            Ok(ch.solve_mat(&sat.transpose()).transpose())
        })
        .collect()
}

/// Joint block Gaussian over `[x_{t+1}; x_t]`.
fn stack_joint(
    log_weight: f64,
    next: &Gaussian,
    filt: &Gaussian,
    pred: &Gaussian,
    k: &DMatrix<f64>,
) -> WeightedGaussian {
    let n = next.dim();
    let mut mean = DVector::zeros(2 * n);
    mean.rows_mut(0, n).copy_from(&next.mean);
    mean.rows_mut(n, n)
        .copy_from(&(&filt.mean + k * (&next.mean - &pred.mean)));
    let cross = k * &next.cov;
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    cov.view_mut((0, 0), (n, n)).copy_from(&next.cov);
    cov.view_mut((n, 0), (n, n)).copy_from(&cross);
    cov.view_mut((0, n), (n, n)).copy_from(&cross.transpose());
    cov.view_mut((n, n), (n, n)).copy_from(&linalg::symmetrized(
        &filt.cov + k * (&next.cov - &pred.cov) * k.transpose(),
    ));
    WeightedGaussian::new(log_weight, Gaussian { mean, cov })
}

/// Joint of `(x_{N+1}, x_N)` given `y_{1:N}`: the final filtered mixture
/// pushed through the dynamics, weights unchanged.
pub fn joint_at_end(filtered: &GaussianMixture, model: &WienerModel, u_n: &DVector<f64>) -> Result<JointSmoothedState> {
    let predicted = time_update(filtered, model, u_n);
    let gains = reverse_gains(filtered, &predicted, model)?;
    let comps = filtered
        .components()
        .iter()
        .zip(predicted.components())
        .zip(&gains)
        .map(|((f, p), k)| stack_joint(f.log_weight, &p.gaussian, &f.gaussian, &p.gaussian, k))
        .collect();
    Ok(JointSmoothedState {
        t: 0,
        posterior: normalized(comps)?,
    })
}

/// Marginal and joint smoothed mixtures for every `t`. Marginals are joined
/// down to the cap after construction; the `t = N` marginal is the final
/// filtered mixture unchanged.
pub fn run_smoother(
    filter: &FilterOutput,
    backward: &BackwardOutput,
    model: &WienerModel,
    u: &[DVector<f64>],
    opts: &SmootherOptions,
) -> Result<SmootherOutput> {
    let n_steps = filter.states.len();
    if backward.updated.len() != n_steps || u.len() != n_steps || n_steps == 0 {
        return Err(Error::Dimension(format!(
            "forward pass has {n_steps} steps, backward {}, inputs {}",
            backward.updated.len(),
            u.len()
        )));
    }
    let marginals = (1..=n_steps)
        .into_par_iter()
        .map(|t| {
            if t == n_steps {
                return Ok(SmoothedState {
                    t,
                    posterior: filter.states[t - 1].filtered.clone(),
                });
            }
            let s = smooth_at(
                t,
                &filter.states[t - 1].predicted,
                backward.updated_at(t),
                &stack_inputs(u, t),
            )
            .map_err(|e| e.at(t))?;
            Ok(SmoothedState {
                t,
                posterior: reduce_by_joining(&s.posterior, opts.max_components),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let joints = (1..=n_steps)
        .into_par_iter()
        .map(|t| {
            let filtered = &filter.states[t - 1].filtered;
            let mut j = if t == n_steps {
                let mut j = joint_at_end(filtered, model, &u[t - 1]).map_err(|e| e.at(t))?;
                j.t = t;
                j
            } else {
                joint_smooth_at(
                    t,
                    filtered,
                    backward.updated_at(t + 1),
                    model,
                    &u[t - 1],
                    &stack_inputs(u, t + 1),
                )
                .map_err(|e| e.at(t))?
            };
            if opts.reduce_joint {
                j.posterior = reduce_by_joining(&j.posterior, opts.max_components);
            }
            Ok(j)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SmootherOutput { marginals, joints })
}
