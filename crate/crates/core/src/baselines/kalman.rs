//! Kalman filter and Rauch–Tung–Striebel smoother with the lag-one
//! cross-covariance, for linear-Gaussian systems with vector outputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss::{Gaussian, LinearConditioner};
use crate::linalg::{self, Chol};
use crate::model::WienerModel;

/// `x_{t+1} = A x + B u + w`, `y = C x + D u + e`, `w ~ N(0,Q)`, `e ~ N(0,R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub mu1: DVector<f64>,
    pub p1: DMatrix<f64>,
}

impl LinearSystem {
    /// The linear part of a Wiener model observing `r` directly (noise `R`).
    pub fn from_wiener(model: &WienerModel) -> LinearSystem {
        LinearSystem {
            a: model.a.clone(),
            b: model.b.clone(),
            c: model.c.clone(),
            d: model.d.clone(),
            q: model.q.clone(),
            r: model.r_mat(),
            mu1: model.mu1.clone(),
            p1: model.p1.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    fn prior(&self) -> Gaussian {
        Gaussian {
            mean: self.mu1.clone(),
            cov: self.p1.clone(),
        }
    }

    fn predict(&self, g: &Gaussian, u: &DVector<f64>) -> Gaussian {
        Gaussian {
            mean: &self.a * &g.mean + &self.b * u,
            cov: linalg::symmetrized(&self.q + &self.a * &g.cov * self.a.transpose()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanStep {
    /// `x_t | y_{1:t−1}`.
    pub predicted: Gaussian,
    /// `x_t | y_{1:t}`.
    pub filtered: Gaussian,
    pub gain: DMatrix<f64>,
    pub log_evidence_increment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanOutput {
    pub steps: Vec<KalmanStep>,
    /// `x_{N+1} | y_{1:N}`.
    pub next_predicted: Gaussian,
    pub log_evidence: f64,
}

impl KalmanOutput {
    pub fn means(&self) -> Vec<DVector<f64>> {
        self.steps.iter().map(|s| s.filtered.mean.clone()).collect()
    }
}

pub fn kalman_filter(sys: &LinearSystem, y: &[DVector<f64>], u: &[DVector<f64>]) -> Result<KalmanOutput> {
    if y.len() != u.len() || y.is_empty() {
        return Err(Error::Dimension(format!(
            "{} measurements, {} inputs",
            y.len(),
            u.len()
        )));
    }
    let mut pred = sys.prior();
    let mut steps = Vec::with_capacity(y.len());
    let mut total = 0.0;
    for (t, (yt, ut)) in y.iter().zip(u).enumerate() {
        let cond = LinearConditioner::new(&pred, &sys.c, &sys.r).map_err(|e| e.at(t + 1))?;
        let (filtered, ev) = cond.apply(yt, &(&sys.d * ut));
        total += ev;
        let next = sys.predict(&filtered, ut);
        steps.push(KalmanStep {
            predicted: std::mem::replace(&mut pred, next),
            filtered,
            gain: cond.gain().clone(),
            log_evidence_increment: ev,
        });
    }
    Ok(KalmanOutput {
        steps,
        next_predicted: pred,
        log_evidence: total,
    })
}

/// Scalar-output convenience for a Wiener model with a linear output map.
pub fn kalman_filter_scalar(model: &WienerModel, y: &[f64], u: &[DVector<f64>]) -> Result<KalmanOutput> {
    let ys: Vec<DVector<f64>> = y.iter().map(|v| DVector::from_element(1, *v)).collect();
    kalman_filter(&LinearSystem::from_wiener(model), &ys, u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedStep {
    pub smoothed: Gaussian,
    /// `J_t = Σ_{t|t} Aᵀ Σ_{t+1|t}⁻¹`; absent at `t = N`.
    pub gain: Option<DMatrix<f64>>,
    /// `Cov(x_t, x_{t−1} | y_{1:N})` by the backward recursion; absent at `t = 1`.
    pub cross: Option<DMatrix<f64>>,
    /// `Σ_{t|N} J_{t−1}ᵀ`, the closed form of the same quantity.
    pub cross_identity: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanSmootherOutput {
    pub steps: Vec<SmoothedStep>,
}

impl KalmanSmootherOutput {
    pub fn means(&self) -> Vec<DVector<f64>> {
        self.steps.iter().map(|s| s.smoothed.mean.clone()).collect()
    }
}

/// The RTS pass alone: smoothed marginals and the gains `J_t`, for any
/// filter that stores predicted and filtered Gaussians (the EKF included).
pub fn rts(kf: &KalmanOutput, a: &DMatrix<f64>) -> Result<(Vec<Gaussian>, Vec<DMatrix<f64>>)> {
    let n_steps = kf.steps.len();
    // J_t for t = 1..N−1 against Σ_{t+1|t}
    let mut gains: Vec<DMatrix<f64>> = Vec::with_capacity(n_steps);
    for t in 0..n_steps.saturating_sub(1) {
        let pn = &kf.steps[t + 1].predicted.cov;
        let ch = Chol::new(pn).map_err(|pivot| Error::DegenerateCovariance { pivot }.at(t + 1))?;
        let sat = &kf.steps[t].filtered.cov * a.transpose();
        gains.push(ch.solve_mat(&sat.transpose()).transpose());
    }
    let mut smoothed: Vec<Gaussian> = vec![kf.steps[n_steps - 1].filtered.clone(); n_steps];
    for t in (0..n_steps.saturating_sub(1)).rev() {
        let j = &gains[t];
        let f = &kf.steps[t].filtered;
        let p = &kf.steps[t + 1].predicted;
        let s = &smoothed[t + 1];
        smoothed[t] = Gaussian {
            mean: &f.mean + j * (&s.mean - &p.mean),
            cov: linalg::symmetrized(&f.cov + j * (&s.cov - &p.cov) * j.transpose()),
        };
    }
    Ok((smoothed, gains))
}

pub fn kalman_smoother(kf: &KalmanOutput, sys: &LinearSystem) -> Result<KalmanSmootherOutput> {
    let n_steps = kf.steps.len();
    let n = sys.n();
    let (smoothed, gains) = rts(kf, &sys.a)?;
    // cross-covariance recursion, M_N = (I − K_N C) A Σ_{N−1|N−1}
    let mut cross: Vec<Option<DMatrix<f64>>> = vec![None; n_steps];
    if n_steps >= 2 {
        let last = n_steps - 1;
        let ikc = DMatrix::identity(n, n) - &kf.steps[last].gain * &sys.c;
        cross[last] = Some(ikc * &sys.a * &kf.steps[last - 1].filtered.cov);
        for t in (1..last).rev() {
            let next = cross[t + 1].as_ref().unwrap();
            let m = &kf.steps[t].filtered.cov * gains[t - 1].transpose()
                + &gains[t] * (next - &sys.a * &kf.steps[t].filtered.cov) * gains[t - 1].transpose();
            cross[t] = Some(m);
        }
    }
    let steps = (0..n_steps)
        .map(|t| SmoothedStep {
            smoothed: smoothed[t].clone(),
            gain: gains.get(t).cloned(),
            cross: cross[t].clone(),
            cross_identity: (t > 0).then(|| &smoothed[t].cov * gains[t - 1].transpose()),
        })
        .collect();
    Ok(KalmanSmootherOutput { steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn scalar(a: f64, c: f64, q: f64, r: f64) -> LinearSystem {
        let m1 = |v: f64| DMatrix::from_element(1, 1, v);
        LinearSystem {
            a: m1(a),
            b: m1(0.0),
            c: m1(c),
            d: m1(0.0),
            q: m1(q),
            r: m1(r),
            mu1: DVector::zeros(1),
            p1: m1(1.0),
        }
    }

    fn random_system(rng: &mut ChaCha8Rng, n: usize) -> LinearSystem {
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rho = a.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
        a *= 0.9 / rho.max(1e-3);
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        LinearSystem {
            a,
            b: DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal)),
            c: DMatrix::from_fn(1, n, |_, _| rng.sample::<f64, _>(StandardNormal)),
            d: DMatrix::from_element(1, 1, 0.3),
            q: &g * g.transpose() * 0.3 + DMatrix::identity(n, n) * 0.1,
            r: DMatrix::from_element(1, 1, 0.5),
            mu1: DVector::zeros(n),
            p1: DMatrix::identity(n, n),
        }
    }

    fn series(rng: &mut ChaCha8Rng, len: usize) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let y = (0..len)
            .map(|_| DVector::from_element(1, rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let u = (0..len)
            .map(|_| DVector::from_element(1, rng.sample::<f64, _>(StandardNormal)))
            .collect();
        (y, u)
    }

    #[test]
    fn zero_output_matrix_never_updates() {
        let sys = scalar(0.8, 0.0, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, u) = series(&mut rng, 20);
        let kf = kalman_filter(&sys, &y, &u).unwrap();
        for s in &kf.steps {
            assert_eq!(s.filtered, s.predicted);
        }
    }

    #[test]
    fn scalar_riccati_fixed_point() {
        // Σ = P/(1+P) with P = Σ + 1  ⇒  Σ² + Σ − 1 = 0
        let sys = scalar(1.0, 1.0, 1.0, 1.0);
        let y = vec![DVector::zeros(1); 60];
        let u = vec![DVector::zeros(1); 60];
        let kf = kalman_filter(&sys, &y, &u).unwrap();
        let want = (5f64.sqrt() - 1.0) / 2.0;
        assert!((kf.steps[59].filtered.cov[(0, 0)] - want).abs() < 1e-12);
    }

    #[test]
    fn cross_covariance_identity_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=4 {
            for _ in 0..5 {
                let sys = random_system(&mut rng, n);
                let (y, u) = series(&mut rng, 30);
                let kf = kalman_filter(&sys, &y, &u).unwrap();
                let ks = kalman_smoother(&kf, &sys).unwrap();
                for s in &ks.steps[1..] {
                    let diff = (s.cross.as_ref().unwrap() - s.cross_identity.as_ref().unwrap()).amax();
                    assert!(diff <= 1e-10, "n={n} diff {diff}");
                }
            }
        }
    }

    #[test]
    fn huge_process_noise_smoothed_equals_filtered() {
        let sys = scalar(0.9, 1.0, 1e8, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (y, u) = series(&mut rng, 10);
        let kf = kalman_filter(&sys, &y, &u).unwrap();
        let ks = kalman_smoother(&kf, &sys).unwrap();
        for (f, s) in kf.steps.iter().zip(&ks.steps) {
            assert!((f.filtered.mean[0] - s.smoothed.mean[0]).abs() < 1e-6);
        }
    }

    /// Dense oracle: stack x_{1:N}, condition on all y at once.
    #[test]
    fn matches_batch_gls() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sys = random_system(&mut rng, 1);
        sys.mu1 = DVector::from_element(1, 0.7);
        let (y, u) = series(&mut rng, 5);
        let n = 5;
        let (a, b, c, d, q, r) = (
            sys.a[(0, 0)],
            sys.b[(0, 0)],
            sys.c[(0, 0)],
            sys.d[(0, 0)],
            sys.q[(0, 0)],
            sys.r[(0, 0)],
        );
        // x = L (x1, w1..w4) + drift, build precision-form GLS
        let mut lmat = DMatrix::zeros(n, n);
        let mut drift = DVector::zeros(n);
        drift[0] = 0.7;
        for t in 0..n {
            for s in 0..=t {
                lmat[(t, s)] = a.powi((t - s) as i32);
            }
            if t > 0 {
                drift[t] = a * drift[t - 1] + b * u[t - 1][0];
            }
        }
        let prior_cov = &lmat
            * DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| if i == 0 { 1.0 } else { q }))
            * lmat.transpose();
        let info = prior_cov.clone().try_inverse().unwrap() + DMatrix::identity(n, n) * (c * c / r);
        let cov = info.clone().try_inverse().unwrap();
        let rhs =
            prior_cov.try_inverse().unwrap() * &drift + DVector::from_fn(n, |t, _| c * (y[t][0] - d * u[t][0]) / r);
        let mean = &cov * rhs;
        let kf = kalman_filter(&sys, &y, &u).unwrap();
        let ks = kalman_smoother(&kf, &sys).unwrap();
        for t in 0..n {
            assert!((ks.steps[t].smoothed.mean[0] - mean[t]).abs() < 1e-8);
            assert!((ks.steps[t].smoothed.cov[(0, 0)] - cov[(t, t)]).abs() < 1e-8);
            if t > 0 {
                assert!((ks.steps[t].cross.as_ref().unwrap()[(0, 0)] - cov[(t, t - 1)]).abs() < 1e-8);
            }
        }
    }
}
