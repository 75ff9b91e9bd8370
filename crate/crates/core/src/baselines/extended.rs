//! The extended system with state `[x_t; r_t]`, which puts the linear output
//! inside the state so the nonlinearity acts on a state coordinate, and the
//! EKF / EKS built on it.
//!
//! `x̃_{t+1} = Ã x̃_t + B̃ ũ_t + w̃_t`, `y_t = g(C̃ x̃_t) + η_t`, with
//! `ũ_t = [u_t; u_{t+1}]` and `u_{N+1} = 0`.

use nalgebra::{DMatrix, DVector};

use super::kalman::{rts, KalmanOutput, KalmanStep};
use crate::error::{Error, Result};
use crate::gauss::{Gaussian, LinearConditioner};
use crate::linalg;
use crate::model::WienerModel;
use crate::nonlinearity::PiecewiseNonlinearity;
use crate::simulate::{psd_sqrt, NoiseDraws};

#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedModel {
    /// `[[A, 0], [CA, 0]]`.
    pub a: DMatrix<f64>,
    /// `[[B, 0], [CB, D]]`.
    pub b: DMatrix<f64>,
    /// `[0 … 0, 1]`.
    pub c: DMatrix<f64>,
    /// Zero row of width `2m`.
    pub d: DMatrix<f64>,
    /// `[[Q, QCᵀ], [CQ, CQCᵀ + R]]`.
    pub q: DMatrix<f64>,
    /// Measurement noise variance on `y`.
    pub p: f64,
    pub n: usize,
    pub m: usize,
    base: WienerModel,
}

pub fn build_extended_system(model: &WienerModel) -> ExtendedModel {
    let (n, m) = (model.n(), model.m());
    let (a, b, c, d, q) = (&model.a, &model.b, &model.c, &model.d, &model.q);
    let mut at = DMatrix::zeros(n + 1, n + 1);
    at.view_mut((0, 0), (n, n)).copy_from(a);
    at.view_mut((n, 0), (1, n)).copy_from(&(c * a));
    let mut bt = DMatrix::zeros(n + 1, 2 * m);
    bt.view_mut((0, 0), (n, m)).copy_from(b);
    bt.view_mut((n, 0), (1, m)).copy_from(&(c * b));
    bt.view_mut((n, m), (1, m)).copy_from(d);
    let mut ct = DMatrix::zeros(1, n + 1);
    ct[(0, n)] = 1.0;
    let mut qt = DMatrix::zeros(n + 1, n + 1);
    let qc = q * c.transpose();
    qt.view_mut((0, 0), (n, n)).copy_from(q);
    qt.view_mut((0, n), (n, 1)).copy_from(&qc);
    qt.view_mut((n, 0), (1, n)).copy_from(&qc.transpose());
    qt[(n, n)] = (c * &qc)[(0, 0)] + model.r;
    ExtendedModel {
        a: at,
        b: bt,
        c: ct,
        d: DMatrix::zeros(1, 2 * m),
        q: qt,
        p: model.p,
        n,
        m,
        base: model.clone(),
    }
}

impl ExtendedModel {
    /// Joint prior of `(x_1, r_1)`.
    pub fn prior(&self, u1: &DVector<f64>) -> Gaussian {
        let md = &self.base;
        let n = self.n;
        let mut mean = DVector::zeros(n + 1);
        mean.rows_mut(0, n).copy_from(&md.mu1);
        mean[n] = (&md.c * &md.mu1)[0] + (&md.d * u1)[0];
        let pc = &md.p1 * md.c.transpose();
        let mut cov = DMatrix::zeros(n + 1, n + 1);
        cov.view_mut((0, 0), (n, n)).copy_from(&md.p1);
        cov.view_mut((0, n), (n, 1)).copy_from(&pc);
        cov.view_mut((n, 0), (1, n)).copy_from(&pc.transpose());
        cov[(n, n)] = (&md.c * &pc)[(0, 0)] + md.r;
        Gaussian { mean, cov }
    }

    fn predict(&self, g: &Gaussian, ut: &DVector<f64>) -> Gaussian {
        Gaussian {
            mean: &self.a * &g.mean + &self.b * ut,
            cov: linalg::symmetrized(&self.q + &self.a * &g.cov * self.a.transpose()),
        }
    }
}

/// `ũ_t = [u_t; u_{t+1}]` with `u_{N+1} = 0`.
pub fn extended_inputs(u: &[DVector<f64>]) -> Vec<DVector<f64>> {
    (0..u.len())
        .map(|t| {
            let m = u[t].len();
            let mut v = DVector::zeros(2 * m);
            v.rows_mut(0, m).copy_from(&u[t]);
            if let Some(next) = u.get(t + 1) {
                v.rows_mut(m, m).copy_from(next);
            }
            v
        })
        .collect()
}

/// Extended states `[x_t; r_t]` driven by the same draws as
/// `simulate_with_noise`.
pub fn simulate_extended(ext: &ExtendedModel, u: &[DVector<f64>], noise: &NoiseDraws) -> Vec<DVector<f64>> {
    let md = &ext.base;
    let n = ext.n;
    let sq = psd_sqrt(&md.q);
    let sp1 = psd_sqrt(&md.p1);
    let sr = md.r.sqrt();
    let x1 = &md.mu1 + &sp1 * &noise.x1;
    let mut xt = DVector::zeros(n + 1);
    xt.rows_mut(0, n).copy_from(&x1);
    xt[n] = (&md.c * &x1)[0] + (&md.d * &u[0])[0] + sr * noise.v[0];
    let ut = extended_inputs(u);
    let mut out = Vec::with_capacity(u.len());
    for t in 0..u.len() {
        let next = if t + 1 < u.len() {
            let w = &sq * &noise.w[t];
            let mut wt = DVector::zeros(n + 1);
            wt.rows_mut(0, n).copy_from(&w);
            wt[n] = (&md.c * &w)[0] + sr * noise.v[t + 1];
            Some(&ext.a * &xt + &ext.b * &ut[t] + wt)
        } else {
            None
        };
        out.push(xt.clone());
        if let Some(nx) = next {
            xt = nx;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfOutput {
    /// Gaussians over the extended state.
    pub inner: KalmanOutput,
    pub n: usize,
}

impl EkfOutput {
    /// Estimates of the original state `x_t`.
    pub fn means(&self) -> Vec<DVector<f64>> {
        self.inner
            .steps
            .iter()
            .map(|s| s.filtered.mean.rows(0, self.n).into_owned())
            .collect()
    }
}

/// EKF on the extended system. The output Jacobian is `[0 … 0, g′(r̂)]`
/// with the right-hand derivative at kinks.
pub fn ekf(ext: &ExtendedModel, nl: &PiecewiseNonlinearity, y: &[f64], u: &[DVector<f64>]) -> Result<EkfOutput> {
    if y.len() != u.len() || y.is_empty() {
        return Err(Error::Dimension(format!(
            "{} measurements, {} inputs",
            y.len(),
            u.len()
        )));
    }
    if !(ext.p > 0.0) {
        return Err(Error::NonPositiveOutputNoise(ext.p));
    }
    let n = ext.n;
    let ut = extended_inputs(u);
    let noise = DMatrix::from_element(1, 1, ext.p);
    let mut pred = ext.prior(&u[0]);
    let mut steps = Vec::with_capacity(y.len());
    let mut total = 0.0;
    for t in 0..y.len() {
        let step = || -> Result<KalmanStep> {
            let r_hat = pred.mean[n];
            let g = nl.evaluate(r_hat)?;
            let slope = nl.derivative(r_hat)?;
            let mut h = DMatrix::zeros(1, n + 1);
            h[(0, n)] = slope;
            // h x̃ + offset = g(r̂) at the linearization point
            let offset = DVector::from_element(1, g - slope * r_hat);
            let cond = LinearConditioner::new(&pred, &h, &noise)?;
            let (filtered, ev) = cond.apply(&DVector::from_element(1, y[t]), &offset);
            Ok(KalmanStep {
                predicted: pred.clone(),
                filtered,
                gain: cond.gain().clone(),
                log_evidence_increment: ev,
            })
        };
        let s = step().map_err(|e| e.at(t + 1))?;
        total += s.log_evidence_increment;
        pred = ext.predict(&s.filtered, &ut[t]);
        steps.push(s);
    }
    Ok(EkfOutput {
        inner: KalmanOutput {
            steps,
            next_predicted: pred,
            log_evidence: total,
        },
        n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EksOutput {
    pub smoothed: Vec<Gaussian>,
    pub n: usize,
}

impl EksOutput {
    pub fn means(&self) -> Vec<DVector<f64>> {
        self.smoothed
            .iter()
            .map(|g| g.mean.rows(0, self.n).into_owned())
            .collect()
    }
}

/// RTS smoothing of the EKF output with `Ã`.
pub fn eks(ext: &ExtendedModel, ekf_out: &EkfOutput) -> Result<EksOutput> {
    let (smoothed, _) = rts(&ekf_out.inner, &ext.a)?;
    Ok(EksOutput { smoothed, n: ext.n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::kalman::{kalman_filter, LinearSystem};
    use crate::simulate::{simulate_with_noise, InputSpec};

    #[test]
    fn example1_blocks() {
        let ext = build_extended_system(&WienerModel::example1());
        assert_eq!(ext.a, DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 1.1 * 0.9, 0.0]));
        assert!((ext.a[(1, 0)] - 0.99).abs() < 1e-15);
        assert_eq!(ext.b, DMatrix::from_row_slice(2, 2, &[2.5, 0.0, 1.1 * 2.5, 1.5]));
        assert_eq!(ext.c, DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        assert_eq!(ext.q, DMatrix::from_row_slice(2, 2, &[1.0, 1.1, 1.1, 1.1 * 1.1 + 0.5]));
    }

    #[test]
    fn zero_output_matrix_gives_block_diagonal_noise() {
        let mut m = WienerModel::example2();
        m.c = DMatrix::zeros(1, 2);
        let ext = build_extended_system(&m);
        let mut want = DMatrix::zeros(3, 3);
        want.view_mut((0, 0), (2, 2)).copy_from(&m.q);
        want[(2, 2)] = m.r;
        assert_eq!(ext.q, want);
    }

    #[test]
    fn co_simulation_matches_original() {
        for model in [
            WienerModel::example1(),
            WienerModel::example2(),
            WienerModel::example3(),
        ] {
            let nl = PiecewiseNonlinearity::identity();
            let u = InputSpec::iid(model.m(), 0.0, 2.0).generate(model.m(), 30, 4).unwrap();
            let noise = NoiseDraws::draw(model.n(), 30, 4);
            let tr = simulate_with_noise(&model, &nl, u.clone(), &noise, 4).unwrap();
            let ext = build_extended_system(&model);
            let xs = simulate_extended(&ext, &u, &noise);
            let n = model.n();
            for t in 0..30 {
                let scale = 1.0 + tr.states[t].amax() + tr.linear_outputs[t].abs();
                assert!((xs[t].rows(0, n) - &tr.states[t]).amax() <= 1e-12 * scale);
                assert!((xs[t][n] - tr.linear_outputs[t]).abs() <= 1e-12 * scale, "t={t}");
            }
        }
    }

    #[test]
    fn linear_output_ekf_is_extended_kalman() {
        let mut model = WienerModel::example2();
        model.p = 0.3;
        let nl = PiecewiseNonlinearity::identity();
        let u = InputSpec::iid(1, 0.0, 2.0).generate(1, 25, 1).unwrap();
        let y: Vec<f64> = (0..25).map(|t| (t as f64 * 0.37).sin() * 3.0).collect();
        let ext = build_extended_system(&model);
        let e = ekf(&ext, &nl, &y, &u).unwrap();
        let prior = ext.prior(&u[0]);
        let sys = LinearSystem {
            a: ext.a.clone(),
            b: ext.b.clone(),
            c: ext.c.clone(),
            d: ext.d.clone(),
            q: ext.q.clone(),
            r: DMatrix::from_element(1, 1, ext.p),
            mu1: prior.mean,
            p1: prior.cov,
        };
        let ys: Vec<DVector<f64>> = y.iter().map(|v| DVector::from_element(1, *v)).collect();
        let kf = kalman_filter(&sys, &ys, &extended_inputs(&u)).unwrap();
        for (a, b) in e.inner.steps.iter().zip(&kf.steps) {
            assert!((&a.filtered.mean - &b.filtered.mean).amax() <= 1e-12);
            assert!((&a.filtered.cov - &b.filtered.cov).amax() <= 1e-12);
        }
    }

    #[test]
    fn square_jacobian_at_two() {
        let mut model = WienerModel::example1();
        model.mu1 = DVector::from_element(1, 0.0);
        let ext = build_extended_system(&model);
        let u = vec![DVector::from_element(1, 2.0 / 1.5)];
        // predicted r̂ = C μ1 + D u1 = 2
        let e = ekf(&ext, &PiecewiseNonlinearity::square(), &[4.0], &u).unwrap();
        let pc = &e.inner.steps[0].predicted.cov;
        let k = &e.inner.steps[0].gain;
        let want = pc.column(1) * 4.0 / (16.0 * pc[(1, 1)] + model.p);
        assert!((k.column(0) - want).amax() < 1e-12);
    }

    #[test]
    fn extended_inputs_pad_with_zero() {
        let u = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 2.0)];
        let ut = extended_inputs(&u);
        assert_eq!(ut[0].as_slice(), &[1.0, 2.0]);
        assert_eq!(ut[1].as_slice(), &[2.0, 0.0]);
    }
}
