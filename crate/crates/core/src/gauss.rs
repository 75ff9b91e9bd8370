//! Gaussian and Gaussian-mixture values, and the conditioning identities that
//! every filter and smoother step is assembled from.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, Chol, MAX_CONDITION};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Tolerance on `Σ exp(log_weight) = 1` for a normalized mixture.
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// A multivariate normal `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Gaussian> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Dimension(format!(
                "mean has {n} entries but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(Gaussian { mean, cov })
    }

    pub fn scalar(mean: f64, var: f64) -> Gaussian {
        Gaussian {
            mean: DVector::from_element(1, mean),
            cov: DMatrix::from_element(1, 1, var),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `log N(x; mean, cov)`.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        log_gauss_eval(x, self)
    }

    /// Checks symmetry (1e-10 relative) and positive semidefiniteness
    /// (smallest eigenvalue ≥ −1e-10·trace).
    pub fn check_invariants(&self) -> Result<()> {
        let scale = self.cov.amax().max(f64::MIN_POSITIVE);
        let asym = (&self.cov - self.cov.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::InvalidModel(format!("covariance asymmetric by {asym:e}")));
        }
        if !self.cov.iter().all(|v| v.is_finite()) || !self.mean.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("non-finite moments".into()));
        }
        let min = linalg::min_eigenvalue(&self.cov);
        if min < -1e-10 * self.cov.trace().abs() {
            return Err(Error::InvalidModel(format!(
                "covariance not PSD (min eigenvalue {min:e})"
            )));
        }
        Ok(())
    }

    /// Marginal over the coordinates `range`.
    pub fn marginal(&self, start: usize, len: usize) -> Gaussian {
        Gaussian {
            mean: self.mean.rows(start, len).into_owned(),
            cov: self.cov.view((start, start), (len, len)).into_owned(),
        }
    }
}

/// A Gaussian carrying a log-domain weight. `-∞` is an exact zero weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGaussian {
    pub log_weight: f64,
    pub gaussian: Gaussian,
}

impl WeightedGaussian {
    pub fn new(log_weight: f64, gaussian: Gaussian) -> WeightedGaussian {
        WeightedGaussian { log_weight, gaussian }
    }
}

/// An ordered list of weighted Gaussians. Order is insertion order and is
/// never changed implicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<WeightedGaussian>,
    normalized: bool,
}

impl GaussianMixture {
    /// Builds an unnormalized mixture.
    pub fn new(components: Vec<WeightedGaussian>) -> GaussianMixture {
        GaussianMixture {
            components,
            normalized: false,
        }
    }

    /// A one-component normalized mixture.
    pub fn single(g: Gaussian) -> GaussianMixture {
        GaussianMixture {
            components: vec![WeightedGaussian::new(0.0, g)],
            normalized: true,
        }
    }

    /// Builds a mixture and normalizes it.
    pub fn normalized(components: Vec<WeightedGaussian>) -> Result<GaussianMixture> {
        let mut m = GaussianMixture::new(components);
        m.normalize()?;
        Ok(m)
    }

    pub(crate) fn from_parts(components: Vec<WeightedGaussian>, normalized: bool) -> Self {
        GaussianMixture { components, normalized }
    }

    pub fn components(&self) -> &[WeightedGaussian] {
        &self.components
    }

    pub fn into_components(self) -> Vec<WeightedGaussian> {
        self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.gaussian.dim())
    }

    /// `log Σ exp(log_weight)`.
    pub fn log_total_weight(&self) -> f64 {
        linalg::log_sum_exp(self.components.iter().map(|c| c.log_weight))
    }

    /// Normalizes in place and returns the log of the total weight before
    /// normalization.
    pub fn normalize(&mut self) -> Result<f64> {
        if self.components.is_empty() {
            return Err(Error::EmptyMixture);
        }
        let total = self.log_total_weight();
        if !total.is_finite() {
            return Err(Error::Unnormalized { total: total.exp() });
        }
        for c in &mut self.components {
            c.log_weight -= total;
        }
        self.normalized = true;
        Ok(total)
    }

    /// Drops components whose normalized weight is below `exp(log_floor)`.
    /// Returns the number removed. Weights are left as they were (the
    /// remaining mass is renormalized only if the mixture was normalized).
    pub fn prune(&mut self, log_floor: f64) -> usize {
        let total = self.log_total_weight();
        let before = self.components.len();
        self.components.retain(|c| c.log_weight - total >= log_floor);
        let removed = before - self.components.len();
        if removed > 0 && self.normalized && !self.components.is_empty() {
            let t = self.log_total_weight();
            for c in &mut self.components {
                c.log_weight -= t;
            }
        }
        removed
    }

    /// `log p(x)` of the (possibly unnormalized) mixture.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        let terms = self
            .components
            .iter()
            .map(|c| Ok(c.log_weight + log_gauss_eval(x, &c.gaussian)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(linalg::log_sum_exp(terms))
    }

    /// Density of the marginal of coordinate `i` at `x`.
    pub fn marginal_pdf(&self, i: usize, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let m = c.gaussian.mean[i];
                let v = c.gaussian.cov[(i, i)];
                (c.log_weight - 0.5 * (LN_2PI + v.ln()) - 0.5 * (x - m) * (x - m) / v).exp()
            })
            .sum()
    }

    /// Marginal mixture over coordinates `[start, start + len)`.
    pub fn marginal(&self, start: usize, len: usize) -> GaussianMixture {
        GaussianMixture {
            components: self
                .components
                .iter()
                .map(|c| WeightedGaussian::new(c.log_weight, c.gaussian.marginal(start, len)))
                .collect(),
            normalized: self.normalized,
        }
    }

    /// Checks the normalization invariant when the mixture claims to be
    /// normalized.
    pub fn check_normalized(&self) -> Result<()> {
        let total: f64 = self.components.iter().map(|c| c.log_weight.exp()).sum();
        if !self.normalized || (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Unnormalized { total });
        }
        Ok(())
    }
}

/// `log N(x; μ, Σ)` via Cholesky.
pub fn log_gauss_eval(x: &DVector<f64>, g: &Gaussian) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::Dimension(format!(
            "point has {} entries, Gaussian has dimension {}",
            x.len(),
            g.dim()
        )));
    }
    let chol = Chol::new(&g.cov).map_err(|pivot| Error::DegenerateCovariance { pivot })?;
    Ok(log_gauss_with(&chol, &(x - &g.mean)))
}

/// `log N(d; 0, Σ)` for a pre-factorized `Σ`.
pub(crate) fn log_gauss_with(chol: &Chol, d: &DVector<f64>) -> f64 {
    -0.5 * (d.len() as f64 * LN_2PI + chol.log_det() + chol.mahalanobis(d))
}

/// Scalar `log N(x; m, v)`.
#[inline]
pub fn log_normal_pdf(x: f64, m: f64, v: f64) -> f64 {
    let d = x - m;
    -0.5 * (LN_2PI + v.ln() + d * d / v)
}

/// A prior prepared for conditioning on `y = C x + offset + e`, `e ~ N(0, R)`.
///
/// The gain, posterior covariance and innovation factorization depend only
/// on `(prior, C, R)`, so one conditioner serves every pseudo-measurement
/// applied to the same prior.
#[derive(Debug, Clone)]
pub struct LinearConditioner {
    prior_mean: DVector<f64>,
    predicted_obs: DVector<f64>,
    gain: DMatrix<f64>,
    posterior_cov: DMatrix<f64>,
    innovation: Chol,
}

impl LinearConditioner {
    pub fn new(prior: &Gaussian, c: &DMatrix<f64>, noise: &DMatrix<f64>) -> Result<Self> {
        let n = prior.dim();
        let p = c.nrows();
        if c.ncols() != n || noise.nrows() != p || noise.ncols() != p {
            return Err(Error::Dimension(format!(
                "observation matrix {}x{}, noise {}x{}, state dimension {n}",
                c.nrows(),
                c.ncols(),
                noise.nrows(),
                noise.ncols()
            )));
        }
        let qct = &prior.cov * c.transpose();
        let s = linalg::symmetrized(noise + c * &qct);
        let innovation = Chol::new(&s).map_err(|pivot| Error::DegenerateInnovation { pivot })?;
        // K = Q Cᵀ S⁻¹ = (S⁻¹ C Q)ᵀ
        let gain = innovation.solve_mat(&qct.transpose()).transpose();
        let mut posterior_cov = &prior.cov - &gain * c * &prior.cov;
        linalg::symmetrize(&mut posterior_cov);
        Ok(LinearConditioner {
            prior_mean: prior.mean.clone(),
            predicted_obs: c * &prior.mean,
            gain,
            posterior_cov,
            innovation,
        })
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn posterior_cov(&self) -> &DMatrix<f64> {
        &self.posterior_cov
    }

    /// Posterior mean for observation `y` with offset `offset`.
    pub fn posterior_mean(&self, y: &DVector<f64>, offset: &DVector<f64>) -> DVector<f64> {
        let innov = y - &self.predicted_obs - offset;
        &self.prior_mean + &self.gain * innov
    }

    /// `log N(y; Cψ + offset, R + CQCᵀ)`.
    pub fn log_evidence(&self, y: &DVector<f64>, offset: &DVector<f64>) -> f64 {
        let innov = y - &self.predicted_obs - offset;
        log_gauss_with(&self.innovation, &innov)
    }

    /// Posterior and log-evidence for one observation.
    pub fn apply(&self, y: &DVector<f64>, offset: &DVector<f64>) -> (Gaussian, f64) {
        let innov = y - &self.predicted_obs - offset;
        let mean = &self.prior_mean + &self.gain * &innov;
        let ev = log_gauss_with(&self.innovation, &innov);
        (
            Gaussian {
                mean,
                cov: self.posterior_cov.clone(),
            },
            ev,
        )
    }
}

/// Posterior `p(x | y)` and `log p(y)` for `x ~ N(ψ, Q)`,
/// `y | x ~ N(C x + offset, R)`.
pub fn condition_on_linear_observation(
    prior: &Gaussian,
    c: &DMatrix<f64>,
    offset: &DVector<f64>,
    noise: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(Gaussian, f64)> {
    if y.len() != c.nrows() || offset.len() != c.nrows() {
        return Err(Error::Dimension(format!(
            "observation has {} entries, offset {}, C has {} rows",
            y.len(),
            offset.len(),
            c.nrows()
        )));
    }
    Ok(LinearConditioner::new(prior, c, noise)?.apply(y, offset))
}

/// Joint Gaussian of `(x, y)` for `x ~ N(ψ, Q)`, `y | x ~ N(C x + offset, R)`.
pub fn joint_gaussian(
    prior: &Gaussian,
    c: &DMatrix<f64>,
    offset: &DVector<f64>,
    noise: &DMatrix<f64>,
) -> Result<Gaussian> {
    let n = prior.dim();
    let p = c.nrows();
    if c.ncols() != n || offset.len() != p || noise.shape() != (p, p) {
        return Err(Error::Dimension("joint_gaussian operands disagree".into()));
    }
    let mut mean = DVector::zeros(n + p);
    mean.rows_mut(0, n).copy_from(&prior.mean);
    mean.rows_mut(n, p).copy_from(&(c * &prior.mean + offset));
    let qct = &prior.cov * c.transpose();
    let mut cov = DMatrix::zeros(n + p, n + p);
    cov.view_mut((0, 0), (n, n)).copy_from(&prior.cov);
    cov.view_mut((0, n), (n, p)).copy_from(&qct);
    cov.view_mut((n, 0), (p, n)).copy_from(&qct.transpose());
    cov.view_mut((n, n), (p, p))
        .copy_from(&linalg::symmetrized(noise + c * &qct));
    Ok(Gaussian { mean, cov })
}

/// Rewrites the likelihood `N(y; O x + offset, P)` as `α · N(x; F⁻¹G, F⁻¹)`
/// with `F = OᵀP⁻¹O`, `G = OᵀP⁻¹(y − offset)`. Returns `(log α, N)`.
///
/// `log α` is fixed by requiring the identity to hold pointwise:
/// `log α = −½ log det(2πP) + ½ log det(2πF⁻¹) − ½(H − GᵀF⁻¹G)` with
/// `H = (y − offset)ᵀP⁻¹(y − offset)`.
pub fn backward_form_to_gaussian(
    o: &DMatrix<f64>,
    offset: &DVector<f64>,
    p: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(f64, Gaussian)> {
    let rows = o.nrows();
    let n = o.ncols();
    if offset.len() != rows || y.len() != rows || p.shape() != (rows, rows) {
        return Err(Error::Dimension("backward form operands disagree".into()));
    }
    if rows < n {
        return Err(Error::UnreducibleBackwardForm(format!(
            "{rows} stacked rows cannot determine {n} states"
        )));
    }
    let pc = Chol::new(p).map_err(|pivot| Error::DegenerateCovariance { pivot })?;
    let pinv_o = pc.solve_mat(o);
    let resid = y - offset;
    let pinv_r = pc.solve_vec(&resid);
    let f = linalg::symmetrized(o.transpose() * &pinv_o);
    let g = o.transpose() * &pinv_r;
    let cond = linalg::sym_condition(&f);
    if !(cond < MAX_CONDITION) {
        return Err(Error::UnreducibleBackwardForm(format!(
            "information matrix condition number {cond:e}"
        )));
    }
    let fc = Chol::new(&f).map_err(|pivot| Error::UnreducibleBackwardForm(format!("F not SPD at pivot {pivot}")))?;
    let mean = fc.solve_vec(&g);
    let cov = linalg::symmetrized(fc.inverse());
    // H − GᵀF⁻¹G is the residual norm at the mean; evaluated directly it
    // avoids the cancellation of two large terms when F is ill-conditioned
    let at_mean = &resid - o * &mean;
    let quad = pc.mahalanobis(&at_mean);
    let log_alpha =
        -0.5 * (rows as f64 * LN_2PI + pc.log_det()) + 0.5 * (n as f64 * LN_2PI - fc.log_det()) - 0.5 * quad;
    Ok((log_alpha, Gaussian { mean, cov }))
}

/// Overall mean and total covariance of a normalized mixture.
pub fn mixture_moments(m: &GaussianMixture) -> Result<Gaussian> {
    m.check_normalized()?;
    Ok(moments_unchecked(m.components()))
}

/// Weighted first two moments, weights taken relative to their sum.
pub(crate) fn moments_unchecked(comps: &[WeightedGaussian]) -> Gaussian {
    let n = comps[0].gaussian.dim();
    let total = linalg::log_sum_exp(comps.iter().map(|c| c.log_weight));
    let ws: Vec<f64> = comps.iter().map(|c| (c.log_weight - total).exp()).collect();
    let mut mean = DVector::zeros(n);
    for (w, c) in ws.iter().zip(comps) {
        mean.axpy(*w, &c.gaussian.mean, 1.0);
    }
    let mut cov = DMatrix::zeros(n, n);
    for (w, c) in ws.iter().zip(comps) {
        let d = &c.gaussian.mean - &mean;
        cov += (&c.gaussian.cov + &d * d.transpose()) * *w;
    }
    linalg::symmetrize(&mut cov);
    Gaussian { mean, cov }
}

/// Normal density `N(x; m, v)` in linear scale (scalar).
pub fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
    (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `P(a ≤ X < b)` for `X ~ N(m, v)`, accurate in either tail. Either bound
/// may be infinite.
pub fn normal_interval_mass(a: f64, b: f64, m: f64, v: f64) -> f64 {
    let sd = v.sqrt();
    let za = (a - m) / sd;
    let zb = (b - m) / sd;
    let s = std::f64::consts::SQRT_2;
    let mass = if za > 0.0 {
        0.5 * (libm::erfc(za / s) - libm::erfc(zb / s))
    } else {
        0.5 * (libm::erfc(-zb / s) - libm::erfc(-za / s))
    };
    mass.max(0.0)
}
