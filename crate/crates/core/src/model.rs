//! The linear block of a Wiener system and the example parameterizations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss::Gaussian;
use crate::linalg;

/// `x_{t+1} = A x + B u + w`, `r = C x + D u + v`, `y = g(r) + η` with
/// `w ~ N(0, Q)`, `v ~ N(0, R)`, `η ~ N(0, P)` and `x_1 ~ N(μ₁, P₁)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// `1 × n`.
    pub c: DMatrix<f64>,
    /// `1 × m`.
    pub d: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: f64,
    pub p: f64,
    pub mu1: DVector<f64>,
    pub p1: DMatrix<f64>,
}

impl WienerModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn prior(&self) -> Gaussian {
        Gaussian {
            mean: self.mu1.clone(),
            cov: self.p1.clone(),
        }
    }

    /// `R` as a 1×1 matrix.
    pub fn r_mat(&self) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.r)
    }

    /// `D u` as a length-1 vector.
    pub fn du(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.d * u
    }

    /// Checks dimensions, symmetry, semidefiniteness and the noise signs.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let m = self.m();
        let bad = |what: &str| Err(Error::InvalidModel(what.to_string()));
        if n == 0 || self.a.ncols() != n {
            return bad("A must be square and non-empty");
        }
        if self.b.nrows() != n {
            return bad("B must have n rows");
        }
        if self.c.shape() != (1, n) {
            return bad("C must be 1×n");
        }
        if self.d.shape() != (1, m) {
            return bad("D must be 1×m");
        }
        if self.q.shape() != (n, n) || self.p1.shape() != (n, n) || self.mu1.len() != n {
            return bad("Q, P1 must be n×n and mu1 length n");
        }
        for (name, s) in [("Q", &self.q), ("P1", &self.p1)] {
            let g = Gaussian {
                mean: DVector::zeros(n),
                cov: s.clone(),
            };
            g.check_invariants()
                .map_err(|e| Error::InvalidModel(format!("{name}: {e}")))?;
        }
        if !(self.r >= 0.0) {
            return bad("R must be non-negative");
        }
        if !(self.p > 0.0) {
            return bad("P must be positive");
        }
        let all_finite = [&self.a, &self.b, &self.c, &self.d]
            .iter()
            .all(|x| x.iter().all(|v| v.is_finite()));
        if !all_finite {
            return bad("non-finite entries");
        }
        Ok(())
    }

    /// One-step prediction of a Gaussian through the dynamics.
    pub fn propagate(&self, g: &Gaussian, u: &DVector<f64>) -> Gaussian {
        let mean = &self.a * &g.mean + &self.b * u;
        let cov = linalg::symmetrized(&self.q + &self.a * &g.cov * self.a.transpose());
        Gaussian { mean, cov }
    }

    /// First-order system with a square output map.
    pub fn example1() -> WienerModel {
        WienerModel {
            a: DMatrix::from_element(1, 1, 0.9),
            b: DMatrix::from_element(1, 1, 2.5),
            c: DMatrix::from_element(1, 1, 1.1),
            d: DMatrix::from_element(1, 1, 1.5),
            q: DMatrix::from_element(1, 1, 1.0),
            r: 0.5,
            p: 0.5,
            mu1: DVector::from_element(1, 1.0),
            p1: DMatrix::from_element(1, 1, 1.0),
        }
    }

    /// Second-order system with the abs/square output map.
    pub fn example2() -> WienerModel {
        WienerModel {
            a: DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.1, 0.7]),
            b: DMatrix::from_row_slice(2, 1, &[1.5, 2.5]),
            c: DMatrix::from_row_slice(1, 2, &[1.1, 0.3]),
            d: DMatrix::from_element(1, 1, 1.2),
            q: DMatrix::identity(2, 2),
            r: 0.5,
            p: 0.5,
            mu1: DVector::from_element(2, 1.0),
            p1: DMatrix::identity(2, 2),
        }
    }

    /// Fourth-order two-input system with a deadzone output map.
    pub fn example3() -> WienerModel {
        WienerModel {
            a: DMatrix::from_row_slice(
                4,
                4,
                &[
                    0.52, 0.4, 0.0, 0.0, //
                    -0.4, 0.52, 0.0, 0.0, //
                    0.0, 0.0, 0.4, 0.6, //
                    0.0, 0.0, 0.06, -0.4,
                ],
            ),
            b: DMatrix::from_row_slice(4, 2, &[0.56, -0.58, 1.1, 0.5, 5.3, -0.8, -1.9, -0.45]),
            c: DMatrix::from_row_slice(1, 4, &[0.5, 0.1, 0.5, 0.7]),
            d: DMatrix::zeros(1, 2),
            q: DMatrix::identity(4, 4) * 2.0,
            r: 1.0,
            p: 0.5,
            mu1: DVector::from_element(4, 1.0),
            p1: DMatrix::identity(4, 4),
        }
    }

    /// Model by preset name (`example1`, `example2`, `example3`).
    pub fn preset(name: &str) -> Option<WienerModel> {
        match name {
            "example1" => Some(Self::example1()),
            "example2" => Some(Self::example2()),
            "example3" => Some(Self::example3()),
            _ => None,
        }
    }
}
