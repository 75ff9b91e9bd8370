//! Gauss–Legendre rules on `[−1, 1]`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub order: usize,
    /// Ascending, symmetric about 0.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// `Σ ωᵢ f(ψᵢ)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }

    /// `∫_a^b f` by the affine map of the rule onto `[a, b]`.
    pub fn integrate_on(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let h = 0.5 * (b - a);
        let c = 0.5 * (b + a);
        h * self.integrate(|x| f(h * x + c))
    }
}

/// `(P_L(x), P′_L(x))` by the three-term recurrence.
fn legendre(order: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=order {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if order == 0 { 1.0 } else { p1 };
    let prev = if order == 0 { 0.0 } else { p0 };
    let dp = order as f64 * (x * p - prev) / (x * x - 1.0);
    (p, dp)
}

fn build(order: usize) -> QuadratureRule {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let half = order.div_ceil(2);
    for i in 0..half {
        let mut x = (PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(order, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(order, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x runs from the largest root downwards
        nodes[order - 1 - i] = x;
        nodes[i] = -x;
        weights[order - 1 - i] = w;
        weights[i] = w;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }
    QuadratureRule { order, nodes, weights }
}

static CACHE: OnceLock<Vec<OnceLock<QuadratureRule>>> = OnceLock::new();

/// The cached `L`-point rule.
pub fn cached_rule(order: usize) -> Result<&'static QuadratureRule> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::QuadratureOrder(order));
    }
    let table = CACHE.get_or_init(|| (0..MAX_ORDER).map(|_| OnceLock::new()).collect());
    Ok(table[order - 1].get_or_init(|| build(order)))
}

/// The `L`-point Gauss–Legendre rule, `1 ≤ L ≤ 200`.
pub fn legendre_rule(order: usize) -> Result<QuadratureRule> {
    cached_rule(order).cloned()
}
