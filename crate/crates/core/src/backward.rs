//! Backward recursion for the likelihood `p(y_{t:N} | x_t)`.
//!
//! The likelihood is a weighted sum `Σ ε N(ζ; O x_t + H u_{t:N}, P)` over
//! stacked pseudo-measurements `ζ`. All components of one state share `O`
//! and `H` (they are built from the same matrices), so those live on the
//! state; `P` starts shared and becomes per-component once components are
//! joined.
//!
//! Once the stack determines `x_t` (full column rank, well-conditioned
//! information matrix) components are rewritten as weighted Gaussians in
//! `x_t` and joined; the reduced form has `O = I`, `H = 0`, `P = U`. While
//! the stack is still rank deficient, joining happens in the space of the
//! stacked measurement `v = O x + H u`, which every component shares.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gauss::{backward_form_to_gaussian, log_gauss_eval, Gaussian, GaussianMixture, WeightedGaussian};
use crate::likelihood::{LikelihoodMixture, LikelihoodSource, QuadratureLikelihood};
use crate::linalg::{self, log_sum_exp};
use crate::model::WienerModel;
use crate::nonlinearity::PiecewiseNonlinearity;
use crate::qgsf::{validate_run, FilterOptions};
use crate::reduction::reduce_by_joining;

/// Components more than this far below the heaviest (in log weight) are
/// dropped before any reduction: `ln 1e-300`.
pub const RELATIVE_LOG_FLOOR: f64 = -690.775_527_898_213_7;

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardComponent {
    /// `log ε`; never normalized.
    pub log_weight: f64,
    pub zeta: DVector<f64>,
    pub p: Arc<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardState {
    pub t: usize,
    pub o: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub components: Vec<BackwardComponent>,
    /// `O = I`, `H = 0` after conversion to state space.
    pub reduced: bool,
    /// Components removed by the relative weight floor at this step.
    pub floored: usize,
}

impl BackwardState {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn stack_len(&self) -> usize {
        self.o.nrows()
    }

    /// `log Σ ε N(ζ; O x + H u_{t:N}, P)`.
    pub fn log_eval(&self, x: &DVector<f64>, u_stack: &DVector<f64>) -> Result<f64> {
        let mean = &self.o * x + &self.h * u_stack;
        let terms = self
            .components
            .iter()
            .map(|c| {
                let g = Gaussian {
                    mean: mean.clone(),
                    cov: (*c.p).clone(),
                };
                Ok(c.log_weight + log_gauss_eval(&c.zeta, &g)?)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(log_sum_exp(terms))
    }

    /// The rank gate: stack determines the state and `OᵀP⁻¹O` is
    /// well-conditioned for every component.
    pub fn is_reducible(&self) -> bool {
        let n = self.o.ncols();
        if self.stack_len() < n {
            return false;
        }
        let mut seen: Vec<*const DMatrix<f64>> = Vec::new();
        for c in &self.components {
            let ptr = Arc::as_ptr(&c.p);
            if seen.contains(&ptr) {
                continue;
            }
            seen.push(ptr);
            let Ok(ch) = linalg::Chol::new(&c.p) else {
                return false;
            };
            let f = linalg::symmetrized(self.o.transpose() * ch.solve_mat(&self.o));
            if !(linalg::sym_condition(&f) < linalg::MAX_CONDITION) {
                return false;
            }
        }
        true
    }
}

/// Stacked inputs `[u_t; …; u_N]` (1-based `t`).
pub fn stack_inputs(u: &[DVector<f64>], t: usize) -> DVector<f64> {
    let parts: Vec<f64> = u[t - 1..].iter().flat_map(|v| v.iter().copied()).collect();
    DVector::from_vec(parts)
}

/// State at `t = N`: one component per likelihood component.
pub fn backward_init(lik: &LikelihoodMixture, model: &WienerModel, t: usize) -> Result<BackwardState> {
    if lik.is_empty() {
        return Err(Error::NoLikelihoodSupport { y: lik.y });
    }
    let p = Arc::new(model.r_mat());
    Ok(BackwardState {
        t,
        o: model.c.clone(),
        h: model.d.clone(),
        components: lik
            .components
            .iter()
            .map(|c| BackwardComponent {
                log_weight: c.log_weight,
                zeta: DVector::from_element(1, c.zeta),
                p: p.clone(),
            })
            .collect(),
        reduced: false,
        floored: 0,
    })
}

/// `(t+1 | t+1) → (t | t+1)`: `O ← OA`, `H ← [OB, H]`, `P ← P + OQOᵀ`.
pub fn backward_predict(state: &BackwardState, model: &WienerModel) -> BackwardState {
    let o = &state.o * &model.a;
    let h = linalg::hstack(&(&state.o * &model.b), &state.h);
    let oqo = &state.o * &model.q * state.o.transpose();
    let mut cache: Vec<(*const DMatrix<f64>, Arc<DMatrix<f64>>)> = Vec::new();
    let components = state
        .components
        .iter()
        .map(|c| {
            let key = Arc::as_ptr(&c.p);
            let p = match cache.iter().find(|(k, _)| *k == key) {
                Some((_, p)) => p.clone(),
                None => {
                    let p = Arc::new(linalg::symmetrized(&*c.p + &oqo));
                    cache.push((key, p.clone()));
                    p
                }
            };
            BackwardComponent {
                log_weight: c.log_weight,
                zeta: c.zeta.clone(),
                p,
            }
        })
        .collect();
    BackwardState {
        t: state.t - 1,
        o,
        h,
        components,
        reduced: false,
        floored: 0,
    }
}

/// `(t | t+1) → (t | t)`: prepend `C`, `[D 0]`, `R` and `ζ_t`; weights
/// `ε φ`. Components are ordered τ-major, k-minor.
pub fn backward_update(state: &BackwardState, lik: &LikelihoodMixture, model: &WienerModel) -> Result<BackwardState> {
    if lik.is_empty() {
        return Err(Error::NoLikelihoodSupport { y: lik.y });
    }
    let m = model.m();
    let width = state.h.ncols();
    let o = linalg::vstack(&model.c, &state.o);
    let mut d_row = DMatrix::zeros(1, width);
    d_row.view_mut((0, 0), (1, m)).copy_from(&model.d);
    let h = linalg::vstack(&d_row, &state.h);
    let r = model.r_mat();
    let mut cache: Vec<(*const DMatrix<f64>, Arc<DMatrix<f64>>)> = Vec::new();
    let ps: Vec<Arc<DMatrix<f64>>> = state
        .components
        .iter()
        .map(|c| {
            let key = Arc::as_ptr(&c.p);
            match cache.iter().find(|(k, _)| *k == key) {
                Some((_, p)) => p.clone(),
                None => {
                    let p = Arc::new(linalg::block_diag(&r, &c.p));
                    cache.push((key, p.clone()));
                    p
                }
            }
        })
        .collect();
    let mut components = Vec::with_capacity(lik.len() * state.len());
    for lc in &lik.components {
        for (k, c) in state.components.iter().enumerate() {
            let mut zeta = DVector::zeros(c.zeta.len() + 1);
            zeta[0] = lc.zeta;
            zeta.rows_mut(1, c.zeta.len()).copy_from(&c.zeta);
            components.push(BackwardComponent {
                log_weight: lc.log_weight + c.log_weight,
                zeta,
                p: ps[k].clone(),
            });
        }
    }
    Ok(BackwardState {
        t: state.t,
        o,
        h,
        components,
        reduced: false,
        floored: 0,
    })
}

fn floor_relative(comps: &mut Vec<BackwardComponent>) -> usize {
    let max = comps.iter().map(|c| c.log_weight).fold(f64::NEG_INFINITY, f64::max);
    let before = comps.len();
    comps.retain(|c| c.log_weight - max >= RELATIVE_LOG_FLOOR);
    before - comps.len()
}

/// Rewrites every component as a weighted Gaussian in `x_t` and joins them
/// down to `max_components`. Fails with `UnreducibleBackwardForm` (reduction
/// postponed) while the stack does not determine the state.
pub fn backward_reduce(state: &BackwardState, u_stack: &DVector<f64>, max_components: usize) -> Result<BackwardState> {
    if !state.is_reducible() {
        return Err(Error::UnreducibleBackwardForm(format!(
            "reduction postponed at t = {}: stack of {} rows does not determine the state",
            state.t,
            state.stack_len()
        )));
    }
    let mut comps = state.components.clone();
    let floored = floor_relative(&mut comps);
    let offset = &state.h * u_stack;
    let converted = comps
        .par_iter()
        .map(|c| {
            let (la, g) = backward_form_to_gaussian(&state.o, &offset, &c.p, &c.zeta)?;
            Ok(WeightedGaussian::new(c.log_weight + la, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let joined = reduce_by_joining(&GaussianMixture::new(converted), max_components);
    Ok(from_state_space(
        state.t,
        state.o.ncols(),
        state.h.ncols(),
        joined,
        state.floored + floored,
    ))
}

fn from_state_space(t: usize, n: usize, width: usize, mix: GaussianMixture, floored: usize) -> BackwardState {
    BackwardState {
        t,
        o: DMatrix::identity(n, n),
        h: DMatrix::zeros(n, width),
        components: mix
            .into_components()
            .into_iter()
            .map(|c| BackwardComponent {
                log_weight: c.log_weight,
                zeta: c.gaussian.mean,
                p: Arc::new(c.gaussian.cov),
            })
            .collect(),
        reduced: true,
        floored,
    }
}

/// Joins components as Gaussians in the stacked measurement `v`, keeping
/// the shared `O` and `H`. Used while the stack is rank deficient.
pub fn join_in_measurement_space(state: &BackwardState, max_components: usize) -> BackwardState {
    let mut comps = state.components.clone();
    let floored = floor_relative(&mut comps);
    let mix = GaussianMixture::new(
        comps
            .into_iter()
            .map(|c| {
                WeightedGaussian::new(
                    c.log_weight,
                    Gaussian {
                        mean: c.zeta,
                        cov: (*c.p).clone(),
                    },
                )
            })
            .collect(),
    );
    let joined = reduce_by_joining(&mix, max_components);
    BackwardState {
        t: state.t,
        o: state.o.clone(),
        h: state.h.clone(),
        components: joined
            .into_components()
            .into_iter()
            .map(|c| BackwardComponent {
                log_weight: c.log_weight,
                zeta: c.gaussian.mean,
                p: Arc::new(c.gaussian.cov),
            })
            .collect(),
        reduced: false,
        floored: state.floored + floored,
    }
}

/// Caps the component count: state-space joining when the rank gate holds,
/// measurement-space joining otherwise. A no-op at or under the cap.
pub fn cap_components(state: BackwardState, u_stack: &DVector<f64>, max_components: usize) -> Result<BackwardState> {
    if state.len() <= max_components {
        return Ok(state);
    }
    if state.is_reducible() {
        backward_reduce(&state, u_stack, max_components)
    } else {
        Ok(join_in_measurement_space(&state, max_components))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardOutput {
    /// `(t | t)` for `t = 1..=N`, after capping.
    pub updated: Vec<BackwardState>,
    /// `(t | t+1)` for `t = 1..=N−1`; index `t − 1`.
    pub predicted: Vec<BackwardState>,
}

impl BackwardOutput {
    pub fn updated_at(&self, t: usize) -> &BackwardState {
        &self.updated[t - 1]
    }

    pub fn predicted_at(&self, t: usize) -> Option<&BackwardState> {
        self.predicted.get(t - 1)
    }
}

/// The backward recursion with the quadrature likelihood.
pub fn run_backward(
    model: &WienerModel,
    nl: &PiecewiseNonlinearity,
    y: &[f64],
    u: &[DVector<f64>],
    opts: &FilterOptions,
) -> Result<BackwardOutput> {
    let src = QuadratureLikelihood {
        nl,
        p: model.p,
        l1: opts.l1,
        l2: opts.l2,
    };
    run_backward_with(&src, model, y, u, opts)
}

pub fn run_backward_with(
    source: &dyn LikelihoodSource,
    model: &WienerModel,
    y: &[f64],
    u: &[DVector<f64>],
    opts: &FilterOptions,
) -> Result<BackwardOutput> {
    validate_run(model, y, u)?;
    let n_steps = y.len();
    let mut updated: Vec<BackwardState> = Vec::with_capacity(n_steps);
    let mut predicted: Vec<BackwardState> = Vec::with_capacity(n_steps.saturating_sub(1));

    let init = (|| {
        let lik = source.mixture(y[n_steps - 1])?;
        let s = backward_init(&lik, model, n_steps)?;
        cap_components(s, &stack_inputs(u, n_steps), opts.max_components)
    })()
    .map_err(|e| e.at(n_steps))?;
    updated.push(init);

    for t in (1..n_steps).rev() {
        let step = || -> Result<(BackwardState, BackwardState)> {
            let pred = backward_predict(updated.last().unwrap(), model);
            let lik = source.mixture(y[t - 1])?;
            let upd = backward_update(&pred, &lik, model)?;
            let upd = cap_components(upd, &stack_inputs(u, t), opts.max_components)?;
            Ok((pred, upd))
        };
        let (pred, upd) = step().map_err(|e| e.at(t))?;
        predicted.push(pred);
        updated.push(upd);
    }
    updated.reverse();
    predicted.reverse();
    Ok(BackwardOutput { updated, predicted })
}
