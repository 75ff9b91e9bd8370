//! `p(y | x)` for the Wiener output: the quadrature mixture of
//! pseudo-measurements used by the Gaussian-sum recursions, and a direct
//! evaluation used by the particle methods.
//!
//! With `r ~ N(Cx + Du, R)` and `y = g(r) + η`,
//! `p(y|x) = Σᵢ ∫ φᵢ(y−η) N(γᵢ(y−η); Cx+Du, R) N(η; 0, P) dη
//!         + Σⱼ N(y − z*ⱼ; 0, P) ∫_{q̲ⱼ}^{q̄ⱼ} N(r; Cx+Du, R) dr`.
//! Each quadrature node turns one of these integrands into a Gaussian in
//! `x`, giving `p(y|x) ≈ Σκ exp(log φκ) N(ζκ; Cx + Du, R)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gauss::{log_normal_pdf, normal_interval_mass};
use crate::linalg::log_sum_exp;
use crate::model::WienerModel;
use crate::nonlinearity::{BranchMap, PiecewiseNonlinearity};
use crate::quadrature::{cached_rule, QuadratureRule};

/// Smallest log-weight kept; below it `exp` underflows.
pub const LOG_WEIGHT_FLOOR: f64 = -745.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentOrigin {
    Branch(usize),
    Quantization(usize),
    /// Injected directly (forced single-component likelihoods).
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodComponent {
    pub log_weight: f64,
    pub zeta: f64,
    pub origin: ComponentOrigin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodMixture {
    pub components: Vec<LikelihoodComponent>,
    pub y: f64,
    /// Nodes whose pseudo-measurement fell outside the branch image.
    pub skipped_out_of_image: usize,
    /// Nodes dropped by the log-weight floor or a singular `φ`.
    pub skipped_negligible: usize,
}

impl LikelihoodMixture {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// `Σκ exp(log φκ) N(ζκ; r̄, R)` with `r̄ = Cx + Du`.
    pub fn evaluate_at_linear_output(&self, r_mean: f64, r_var: f64) -> f64 {
        log_sum_exp(
            self.components
                .iter()
                .map(|c| c.log_weight + log_normal_pdf(c.zeta, r_mean, r_var)),
        )
        .exp()
    }

    /// The approximate `p(y | x)`.
    pub fn evaluate(&self, model: &WienerModel, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let r_mean = (&model.c * x)[0] + (&model.d * u)[0];
        self.evaluate_at_linear_output(r_mean, model.r)
    }
}

/// A producer of likelihood mixtures for the Gaussian-sum recursions.
pub trait LikelihoodSource: Sync {
    fn mixture(&self, y: f64) -> Result<LikelihoodMixture>;
}

/// The Gauss–Legendre construction.
#[derive(Debug, Clone)]
pub struct QuadratureLikelihood<'a> {
    pub nl: &'a PiecewiseNonlinearity,
    pub p: f64,
    pub l1: usize,
    pub l2: usize,
}

impl LikelihoodSource for QuadratureLikelihood<'_> {
    fn mixture(&self, y: f64) -> Result<LikelihoodMixture> {
        build_mixture(self.nl, self.p, y, self.l1, self.l2)
    }
}

/// `p(y | x) = N(y; Cx + Du, R)`: one component, `ζ = y`, `φ = 1`. With a
/// linear output this turns the Gaussian-sum recursions into Kalman ones.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForcedSingleComponent;

impl LikelihoodSource for ForcedSingleComponent {
    fn mixture(&self, y: f64) -> Result<LikelihoodMixture> {
        Ok(LikelihoodMixture {
            components: vec![LikelihoodComponent {
                log_weight: 0.0,
                zeta: y,
                origin: ComponentOrigin::Direct,
            }],
            y,
            skipped_out_of_image: 0,
            skipped_negligible: 0,
        })
    }
}

/// Quadrature mixture for measurement `y`. Weights are not normalized.
pub fn likelihood_mixture(
    model: &WienerModel,
    nl: &PiecewiseNonlinearity,
    y: f64,
    l1: usize,
    l2: usize,
) -> Result<LikelihoodMixture> {
    build_mixture(nl, model.p, y, l1, l2)
}

fn singular_at_zero(map: &BranchMap) -> bool {
    match map {
        BranchMap::Square => true,
        BranchMap::SignedPower { p } => *p > 1.0,
        _ => false,
    }
}

fn build_mixture(nl: &PiecewiseNonlinearity, p: f64, y: f64, l1: usize, l2: usize) -> Result<LikelihoodMixture> {
    if !(p > 0.0) {
        return Err(Error::NonPositiveOutputNoise(p));
    }
    let mut components = Vec::new();
    let mut skipped_out_of_image = 0;
    let mut skipped_negligible = 0;

    if !nl.branches.is_empty() {
        let rule = cached_rule(l1)?;
        for (i, branch) in nl.branches.iter().enumerate() {
            let image = branch.image();
            let singular = singular_at_zero(&branch.map);
            for (psi, omega) in rule.nodes.iter().zip(&rule.weights) {
                let one_m = 1.0 - psi * psi;
                let lambda = psi / one_m;
                let z = y - lambda;
                if !image.contains_open(z) {
                    skipped_out_of_image += 1;
                    continue;
                }
                if singular && z.abs() <= 1e-300 {
                    skipped_negligible += 1;
                    continue;
                }
                let log_w = omega.ln()
                    + branch.log_inverse_derivative(z)
                    + log_normal_pdf(lambda, 0.0, p)
                    + ((1.0 + psi * psi) / (one_m * one_m)).ln();
                if log_w > LOG_WEIGHT_FLOOR {
                    components.push(LikelihoodComponent {
                        log_weight: log_w,
                        zeta: branch.inverse(z),
                        origin: ComponentOrigin::Branch(i),
                    });
                } else {
                    skipped_negligible += 1;
                }
            }
        }
    }

    if !nl.quant_sets.is_empty() {
        let rule = cached_rule(l2)?;
        for (j, q) in nl.quant_sets.iter().enumerate() {
            let log_level = log_normal_pdf(y - q.level, 0.0, p);
            for (psi, omega) in rule.nodes.iter().zip(&rule.weights) {
                let (m, log_jac) = quantization_node(q.lower, q.upper, *psi);
                let log_w = omega.ln() + log_level + log_jac;
                if log_w > LOG_WEIGHT_FLOOR && m.is_finite() {
                    components.push(LikelihoodComponent {
                        log_weight: log_w,
                        zeta: m,
                        origin: ComponentOrigin::Quantization(j),
                    });
                } else {
                    skipped_negligible += 1;
                }
            }
        }
    }

    Ok(LikelihoodMixture {
        components,
        y,
        skipped_out_of_image,
        skipped_negligible,
    })
}

/// Node `m` in `[lo, hi)` for `ψ ∈ (−1, 1)` and `log |dm/dψ|`.
///
/// Bounded sets use the affine map. A half-line `[q, ∞)` uses
/// `m = q + (1+ψ)/(1−ψ)`, and `(−∞, q)` its mirror, both with
/// `|dm/dψ| = 2/(1∓ψ)²`.
fn quantization_node(lo: f64, hi: f64, psi: f64) -> (f64, f64) {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => (psi * (hi - lo) / 2.0 + (hi + lo) / 2.0, ((hi - lo) / 2.0).ln()),
        (true, false) => (lo + (1.0 + psi) / (1.0 - psi), (2.0 / ((1.0 - psi) * (1.0 - psi))).ln()),
        (false, true) => (hi - (1.0 - psi) / (1.0 + psi), (2.0 / ((1.0 + psi) * (1.0 + psi))).ln()),
        (false, false) => (f64::NAN, f64::NEG_INFINITY),
    }
}

/// Direct evaluation of `log p(y | r̄)` with `r ~ N(r̄, R)`, integrating in
/// `r` rather than through the pseudo-measurement mixture.
///
/// Each monotone branch is integrated by an 80-point rule over the part of
/// its domain inside both `r̄ ± 9√R` and the preimage of `y ± 9√P`; constant
/// pieces contribute their exact Gaussian mass.
#[derive(Debug, Clone)]
pub struct DirectLikelihood<'a> {
    nl: &'a PiecewiseNonlinearity,
    r_var: f64,
    p: f64,
    rule: &'static QuadratureRule,
}

pub const DIRECT_ORDER: usize = 80;
const WINDOW_SD: f64 = 9.0;

impl<'a> DirectLikelihood<'a> {
    pub fn new(model: &WienerModel, nl: &'a PiecewiseNonlinearity) -> Result<Self> {
        if !(model.p > 0.0) {
            return Err(Error::NonPositiveOutputNoise(model.p));
        }
        Ok(DirectLikelihood {
            nl,
            r_var: model.r,
            p: model.p,
            rule: cached_rule(DIRECT_ORDER)?,
        })
    }

    /// `log p(y | r̄)`.
    pub fn log_eval(&self, y: f64, r_mean: f64) -> f64 {
        if self.r_var <= 0.0 {
            return match self.nl.evaluate(r_mean) {
                Ok(z) => log_normal_pdf(y, z, self.p),
                Err(_) => f64::NEG_INFINITY,
            };
        }
        let sr = self.r_var.sqrt();
        let sp = self.p.sqrt();
        let mut terms: Vec<f64> = Vec::with_capacity(2 * DIRECT_ORDER);
        for b in &self.nl.branches {
            let img = b.image();
            let zlo = (y - WINDOW_SD * sp).max(img.lo);
            let zhi = (y + WINDOW_SD * sp).min(img.hi);
            if !(zlo < zhi) {
                continue;
            }
            let (ra, rb) = {
                let a = b.inverse(zlo);
                let c = b.inverse(zhi);
                (a.min(c), a.max(c))
            };
            let lo = ra.max(b.domain.lo).max(r_mean - WINDOW_SD * sr);
            let hi = rb.min(b.domain.hi).min(r_mean + WINDOW_SD * sr);
            if !(lo < hi) {
                continue;
            }
            let h = 0.5 * (hi - lo);
            let c = 0.5 * (hi + lo);
            let log_h = h.ln();
            for (x, w) in self.rule.nodes.iter().zip(&self.rule.weights) {
                let r = h * x + c;
                terms.push(
                    w.ln() + log_h + log_normal_pdf(r, r_mean, self.r_var) + log_normal_pdf(y, b.forward(r), self.p),
                );
            }
        }
        for q in &self.nl.quant_sets {
            let mass = normal_interval_mass(q.lower, q.upper, r_mean, self.r_var);
            if mass > 0.0 {
                terms.push(mass.ln() + log_normal_pdf(y, q.level, self.p));
            }
        }
        log_sum_exp(terms)
    }
}
