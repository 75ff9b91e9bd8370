//! Forward Gaussian-sum filter driven by quadrature likelihood mixtures.
//!
//! Every step is a bank of Kalman measurement updates, one per
//! (pseudo-measurement κ, predicted component ℓ) pair, followed by
//! pruning, joining down to the component cap and a Kalman time update of
//! each surviving component.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gauss::{mixture_moments, Gaussian, GaussianMixture, LinearConditioner, WeightedGaussian};
use crate::likelihood::{LikelihoodMixture, LikelihoodSource, QuadratureLikelihood};
use crate::linalg::log_sum_exp;
use crate::model::WienerModel;
use crate::nonlinearity::PiecewiseNonlinearity;
use crate::reduction::reduce_by_joining;

/// Components whose normalized log-weight is below this are dropped before
/// joining.
pub const PRUNE_LOG_WEIGHT: f64 = -46.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOptions {
    pub l1: usize,
    pub l2: usize,
    pub max_components: usize,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions {
            l1: 10,
            l2: 10,
            max_components: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDiagnostics {
    /// One gain per predicted component.
    pub gains: Vec<DMatrix<f64>>,
    /// Unnormalized log-weights, κ-major.
    pub raw_log_weights: Vec<f64>,
    /// Components removed by pruning before joining.
    pub dropped: usize,
    pub likelihood_components: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub t: usize,
    /// `p(x_t | y_{1:t−1})`.
    pub predicted: GaussianMixture,
    /// `p(x_t | y_{1:t})` after pruning and joining.
    pub filtered: GaussianMixture,
    /// `log p(y_t | y_{1:t−1})`.
    pub log_evidence_increment: f64,
    /// Component count straight out of the measurement update.
    pub components_before_reduction: usize,
    pub diagnostics: UpdateDiagnostics,
}

impl FilterState {
    /// Mean and total covariance of the filtered mixture.
    pub fn estimate(&self) -> Gaussian {
        mixture_moments(&self.filtered).expect("filtered mixtures are normalized")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub states: Vec<FilterState>,
    pub log_evidence: f64,
}

impl FilterOutput {
    pub fn means(&self) -> Vec<DVector<f64>> {
        self.states.iter().map(|s| s.estimate().mean).collect()
    }
}

/// Bayes update of a predicted mixture by a likelihood mixture. The result
/// has exactly `K·M` components (κ-major), normalized. Returns the filtered
/// mixture, diagnostics and `log p(y_t | y_{1:t−1})`.
pub fn measurement_update(
    predicted: &GaussianMixture,
    lik: &LikelihoodMixture,
    model: &WienerModel,
    u: &DVector<f64>,
) -> Result<(GaussianMixture, UpdateDiagnostics, f64)> {
    if lik.is_empty() {
        return Err(Error::NoLikelihoodSupport { y: lik.y });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyMixture);
    }
    let r = model.r_mat();
    let offset = model.du(u);
    let conditioners = predicted
        .components()
        .par_iter()
        .map(|c| LinearConditioner::new(&c.gaussian, &model.c, &r))
        .collect::<Result<Vec<_>>>()?;
    let m = conditioners.len();
    let comps: Vec<WeightedGaussian> = (0..lik.len() * m)
        .into_par_iter()
        .map(|k| {
            let (kappa, ell) = (k / m, k % m);
            let lc = &lik.components[kappa];
            let y = DVector::from_element(1, lc.zeta);
            let (g, ev) = conditioners[ell].apply(&y, &offset);
            WeightedGaussian::new(lc.log_weight + predicted.components()[ell].log_weight + ev, g)
        })
        .collect();
    let raw: Vec<f64> = comps.iter().map(|c| c.log_weight).collect();
    let log_evidence = log_sum_exp(raw.iter().copied());
    if !log_evidence.is_finite() {
        return Err(Error::NoLikelihoodSupport { y: lik.y });
    }
    let mut filtered = GaussianMixture::new(comps);
    filtered.normalize()?;
    let diag = UpdateDiagnostics {
        gains: conditioners.iter().map(|c| c.gain().clone()).collect(),
        raw_log_weights: raw,
        dropped: 0,
        likelihood_components: lik.len(),
    };
    Ok((filtered, diag, log_evidence))
}

/// Pushes every component through the dynamics; weights unchanged.
pub fn time_update(filtered: &GaussianMixture, model: &WienerModel, u: &DVector<f64>) -> GaussianMixture {
    let comps = filtered
        .components()
        .par_iter()
        .map(|c| WeightedGaussian::new(c.log_weight, model.propagate(&c.gaussian, u)))
        .collect();
    GaussianMixture::from_parts(comps, filtered.is_normalized())
}

fn check_sequences(model: &WienerModel, y: &[f64], u: &[DVector<f64>]) -> Result<()> {
    model.validate()?;
    if y.is_empty() || y.len() != u.len() {
        return Err(Error::Dimension(format!(
            "{} measurements and {} inputs; need equal non-zero lengths",
            y.len(),
            u.len()
        )));
    }
    if u.iter().any(|v| v.len() != model.m()) {
        return Err(Error::Dimension("input vector length differs from m".into()));
    }
    Ok(())
}

pub(crate) fn validate_run(model: &WienerModel, y: &[f64], u: &[DVector<f64>]) -> Result<()> {
    check_sequences(model, y, u)
}

/// The filter over `y_{1:N}` with the quadrature likelihood.
pub fn run_filter(
    model: &WienerModel,
    nl: &PiecewiseNonlinearity,
    y: &[f64],
    u: &[DVector<f64>],
    opts: &FilterOptions,
) -> Result<FilterOutput> {
    let src = QuadratureLikelihood {
        nl,
        p: model.p,
        l1: opts.l1,
        l2: opts.l2,
    };
    run_filter_with(&src, model, y, u, opts)
}

/// The filter with an arbitrary likelihood source.
pub fn run_filter_with(
    source: &dyn LikelihoodSource,
    model: &WienerModel,
    y: &[f64],
    u: &[DVector<f64>],
    opts: &FilterOptions,
) -> Result<FilterOutput> {
    check_sequences(model, y, u)?;
    let mut predicted = GaussianMixture::single(model.prior());
    let mut states = Vec::with_capacity(y.len());
    let mut total = 0.0;
    for (i, (&yt, ut)) in y.iter().zip(u).enumerate() {
        let t = i + 1;
        let step = || -> Result<FilterState> {
            let lik = source.mixture(yt)?;
            let (mut filtered, mut diag, ev) = measurement_update(&predicted, &lik, model, ut)?;
            let before = filtered.len();
            diag.dropped = filtered.prune(PRUNE_LOG_WEIGHT);
            let filtered = reduce_by_joining(&filtered, opts.max_components);
            Ok(FilterState {
                t,
                predicted: predicted.clone(),
                filtered,
                log_evidence_increment: ev,
                components_before_reduction: before,
                diagnostics: diag,
            })
        };
        let state = step().map_err(|e| e.at(t))?;
        total += state.log_evidence_increment;
        predicted = time_update(&state.filtered, model, ut);
        states.push(state);
    }
    Ok(FilterOutput {
        states,
        log_evidence: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::condition_on_linear_observation;
    use crate::likelihood::{ComponentOrigin, ForcedSingleComponent, LikelihoodComponent};
    use approx::assert_abs_diff_eq;

    fn lik_of(parts: &[(f64, f64)], y: f64) -> LikelihoodMixture {
        LikelihoodMixture {
            components: parts
                .iter()
                .map(|&(lw, z)| LikelihoodComponent {
                    log_weight: lw,
                    zeta: z,
                    origin: ComponentOrigin::Direct,
                })
                .collect(),
            y,
            skipped_out_of_image: 0,
            skipped_negligible: 0,
        }
    }

    #[test]
    fn single_component_is_a_kalman_update() {
        let model = WienerModel::example2();
        let prior = Gaussian::new(
            DVector::from_vec(vec![0.3, -1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.7]),
        )
        .unwrap();
        let u = DVector::from_element(1, 0.4);
        let (f, _, ev) = measurement_update(
            &GaussianMixture::single(prior.clone()),
            &lik_of(&[(0.0, 1.7)], 1.7),
            &model,
            &u,
        )
        .unwrap();
        let (want, want_ev) = condition_on_linear_observation(
            &prior,
            &model.c,
            &model.du(&u),
            &model.r_mat(),
            &DVector::from_element(1, 1.7),
        )
        .unwrap();
        assert_eq!(f.len(), 1);
        assert!((f.components()[0].gaussian.mean.clone() - want.mean).amax() < 1e-14);
        assert!((f.components()[0].gaussian.cov.clone() - want.cov).amax() < 1e-14);
        assert_abs_diff_eq!(ev, want_ev, epsilon = 1e-14);
    }

    #[test]
    fn symmetric_pseudo_measurements_keep_the_mean() {
        let model = WienerModel::example1();
        let prior = Gaussian::scalar(1.0, 2.0);
        let u = DVector::from_element(1, 0.2);
        let centre = 1.1 * 1.0 + 1.5 * 0.2;
        let (f, _, _) = measurement_update(
            &GaussianMixture::single(prior),
            &lik_of(&[(0.0, centre - 2.0), (0.0, centre + 2.0)], 0.0),
            &model,
            &u,
        )
        .unwrap();
        assert_eq!(f.len(), 2);
        let (a, b) = (&f.components()[0], &f.components()[1]);
        assert_abs_diff_eq!(a.log_weight, b.log_weight, epsilon = 1e-14);
        assert_abs_diff_eq!(a.gaussian.mean[0] + b.gaussian.mean[0], 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(mixture_moments(&f).unwrap().mean[0], 1.0, epsilon = 1e-13);
    }

    #[test]
    fn empty_likelihood_is_an_error() {
        let model = WienerModel::example1();
        let err = measurement_update(
            &GaussianMixture::single(model.prior()),
            &lik_of(&[], 3.0),
            &model,
            &DVector::zeros(1),
        )
        .unwrap_err();
        assert_eq!(err, Error::NoLikelihoodSupport { y: 3.0 });
    }

    #[test]
    fn count_law_before_reduction() {
        let model = WienerModel::example1();
        let pred = GaussianMixture::normalized(
            (0..3)
                .map(|k| WeightedGaussian::new(0.0, Gaussian::scalar(k as f64, 1.0)))
                .collect(),
        )
        .unwrap();
        let lik = lik_of(&[(0.0, 1.0), (-1.0, 2.0), (-2.0, -1.0), (0.5, 0.0)], 0.0);
        let (f, diag, _) = measurement_update(&pred, &lik, &model, &DVector::zeros(1)).unwrap();
        assert_eq!(f.len(), 12);
        assert_eq!(diag.gains.len(), 3);
        f.check_normalized().unwrap();
    }

    #[test]
    fn time_update_identity_and_scalar() {
        let mut model = WienerModel::example2();
        model.a = DMatrix::identity(2, 2);
        model.b = DMatrix::zeros(2, 1);
        model.q = DMatrix::zeros(2, 2);
        let m =
            GaussianMixture::single(Gaussian::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2)).unwrap());
        assert_eq!(time_update(&m, &model, &DVector::from_element(1, 3.0)), m);

        let model = WienerModel::example1();
        let m = GaussianMixture::single(Gaussian::scalar(1.0, 2.0));
        let out = time_update(&m, &model, &DVector::from_element(1, 0.5));
        let g = &out.components()[0].gaussian;
        assert_abs_diff_eq!(g.mean[0], 0.9 + 2.5 * 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g.cov[(0, 0)], 1.0 + 0.81 * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn one_step_run_is_one_update() {
        let model = WienerModel::example1();
        let nl = PiecewiseNonlinearity::square();
        let u = vec![DVector::from_element(1, 0.3)];
        let out = run_filter(
            &model,
            &nl,
            &[2.0],
            &u,
            &FilterOptions {
                max_components: 1000,
                ..Default::default()
            },
        )
        .unwrap();
        let lik = crate::likelihood::likelihood_mixture(&model, &nl, 2.0, 10, 10).unwrap();
        let (mut f, _, ev) = measurement_update(&GaussianMixture::single(model.prior()), &lik, &model, &u[0]).unwrap();
        f.prune(PRUNE_LOG_WEIGHT);
        assert_eq!(out.states.len(), 1);
        assert_eq!(out.states[0].filtered, f);
        assert_eq!(out.log_evidence, ev);
    }

    #[test]
    fn forced_single_component_run_matches_manual_kalman() {
        let model = WienerModel::example1();
        let ys = [0.5, -1.0, 2.0];
        let us: Vec<_> = [0.1, -0.2, 0.4].iter().map(|v| DVector::from_element(1, *v)).collect();
        let out = run_filter_with(&ForcedSingleComponent, &model, &ys, &us, &FilterOptions::default()).unwrap();
        let (mut m, mut p) = (1.0f64, 1.0f64);
        for t in 0..3 {
            let s = 0.5 + 1.21 * p;
            let k = p * 1.1 / s;
            m += k * (ys[t] - 1.1 * m - 1.5 * us[t][0]);
            p *= 1.0 - k * 1.1;
            let g = &out.states[t].filtered.components()[0].gaussian;
            assert_abs_diff_eq!(g.mean[0], m, epsilon = 1e-12);
            assert_abs_diff_eq!(g.cov[(0, 0)], p, epsilon = 1e-12);
            m = 0.9 * m + 2.5 * us[t][0];
            p = 0.81 * p + 1.0;
        }
    }

    #[test]
    fn error_is_annotated_with_time() {
        // y far below the image of z = r² leaves no support.
        let model = WienerModel::example1();
        let nl = PiecewiseNonlinearity::square();
        let us = vec![DVector::zeros(1); 2];
        let err = run_filter(&model, &nl, &[1.0, -1e4], &us, &FilterOptions::default()).unwrap_err();
        assert!(matches!(err, Error::AtTime { t: 2, .. }));
        assert!(matches!(err.root(), Error::NoLikelihoodSupport { .. }));
    }
}
