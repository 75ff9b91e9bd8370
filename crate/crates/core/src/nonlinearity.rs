//! Piecewise output maps `z = g(r)` built from strictly monotone branches
//! and constant (quantization) pieces.
//!
//! Every interval is lower-closed and upper-open. Branch images are treated
//! as open intervals: the image endpoints carry no probability mass.

use std::fmt;

use crate::error::{Error, Result};
use crate::gauss::{normal_interval_mass, normal_pdf};

/// `[lo, hi)`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }
    }

    /// Lower-closed, upper-open membership.
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x < self.hi
    }

    /// Open-interval membership.
    pub fn contains_open(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

/// Hand-supplied branch map, used for maps outside the catalog and for fault
/// injection in tests.
#[derive(Clone, Copy)]
pub struct CustomMap {
    pub forward: fn(f64) -> f64,
    pub derivative: fn(f64) -> f64,
    pub inverse: fn(f64) -> f64,
    pub inverse_derivative: fn(f64) -> f64,
}

impl fmt::Debug for CustomMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomMap")
    }
}

/// Forward map of a monotone branch, from a fixed catalog with closed-form
/// inverses.
#[derive(Debug, Clone)]
pub enum BranchMap {
    /// `z = slope·r + offset`, `slope ≠ 0`.
    Affine {
        slope: f64,
        offset: f64,
    },
    /// `z = r²` on a domain that does not straddle 0.
    Square,
    /// `z = |r|` on a non-positive domain.
    NegAbs,
    /// `z = sign(r)|r|^p`, `p > 0`.
    SignedPower {
        p: f64,
    },
    /// Piecewise-linear interpolation through strictly monotone knots,
    /// extrapolated with the end slopes.
    Table {
        r: Vec<f64>,
        z: Vec<f64>,
    },
    Custom(CustomMap),
}

impl BranchMap {
    fn table_segment(knots: &[f64], x: f64) -> usize {
        // index s with knots[s] ≤ x < knots[s+1], clamped to the end segments
        let n = knots.len();
        match knots.partition_point(|k| *k <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    fn table_slope(r: &[f64], z: &[f64], s: usize) -> f64 {
        (z[s + 1] - z[s]) / (r[s + 1] - r[s])
    }
}

/// A strictly monotone piece of `g` with its analytic inverse `γ` and
/// inverse-derivative magnitude `φ = |dγ/dz|`.
#[derive(Debug, Clone)]
pub struct MonotoneBranch {
    pub domain: Interval,
    pub map: BranchMap,
}

impl MonotoneBranch {
    pub fn new(domain: Interval, map: BranchMap) -> MonotoneBranch {
        MonotoneBranch { domain, map }
    }

    pub fn forward(&self, r: f64) -> f64 {
        match &self.map {
            BranchMap::Affine { slope, offset } => slope * r + offset,
            BranchMap::Square => r * r,
            BranchMap::NegAbs => r.abs(),
            BranchMap::SignedPower { p } => r.signum() * r.abs().powf(*p),
            BranchMap::Table { r: rk, z: zk } => {
                if r.is_infinite() {
                    let s = if r > 0.0 { rk.len() - 2 } else { 0 };
                    return BranchMap::table_slope(rk, zk, s) * r;
                }
                let s = BranchMap::table_segment(rk, r);
                zk[s] + BranchMap::table_slope(rk, zk, s) * (r - rk[s])
            }
            BranchMap::Custom(c) => (c.forward)(r),
        }
    }

    /// `g′(r)`, the right-hand derivative at knots.
    pub fn derivative(&self, r: f64) -> f64 {
        match &self.map {
            BranchMap::Affine { slope, .. } => *slope,
            BranchMap::Square => 2.0 * r,
            BranchMap::NegAbs => -1.0,
            BranchMap::SignedPower { p } => {
                if r == 0.0 {
                    if *p < 1.0 {
                        f64::INFINITY
                    } else if *p == 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    p * r.abs().powf(p - 1.0)
                }
            }
            BranchMap::Table { r: rk, z: zk } => BranchMap::table_slope(rk, zk, BranchMap::table_segment(rk, r)),
            BranchMap::Custom(c) => (c.derivative)(r),
        }
    }

    /// `γ(z)`: the root of `g(r) = z` in this branch's domain.
    pub fn inverse(&self, z: f64) -> f64 {
        match &self.map {
            BranchMap::Affine { slope, offset } => (z - offset) / slope,
            BranchMap::Square => {
                if self.domain.lo >= 0.0 {
                    z.sqrt()
                } else {
                    -z.sqrt()
                }
            }
            BranchMap::NegAbs => -z,
            BranchMap::SignedPower { p } => z.signum() * z.abs().powf(1.0 / p),
            BranchMap::Table { r: rk, z: zk } => {
                let increasing = zk[1] > zk[0];
                let s = if increasing {
                    BranchMap::table_segment(zk, z)
                } else {
                    let neg: Vec<f64> = zk.iter().map(|v| -v).collect();
                    BranchMap::table_segment(&neg, -z)
                };
                rk[s] + (z - zk[s]) / BranchMap::table_slope(rk, zk, s)
            }
            BranchMap::Custom(c) => (c.inverse)(z),
        }
    }

    /// `φ(z) = |γ′(z)|`.
    pub fn inverse_derivative(&self, z: f64) -> f64 {
        match &self.map {
            BranchMap::Affine { slope, .. } => 1.0 / slope.abs(),
            BranchMap::Square => 0.5 / z.sqrt(),
            BranchMap::NegAbs => 1.0,
            BranchMap::SignedPower { p } => z.abs().powf(1.0 / p - 1.0) / p,
            BranchMap::Table { .. } => 1.0 / self.derivative(self.inverse(z)).abs(),
            BranchMap::Custom(c) => (c.inverse_derivative)(z),
        }
    }

    /// `log φ(z)`, computed without forming `φ` where that could overflow.
    pub fn log_inverse_derivative(&self, z: f64) -> f64 {
        match &self.map {
            BranchMap::Square => (0.5f64).ln() - 0.5 * z.ln(),
            BranchMap::SignedPower { p } => (1.0 / p - 1.0) * z.abs().ln() - p.ln(),
            _ => self.inverse_derivative(z).ln(),
        }
    }

    /// The image `g(domain)` as an open interval.
    pub fn image(&self) -> Interval {
        let a = self.forward(self.domain.lo);
        let b = self.forward(self.domain.hi);
        Interval::new(a.min(b), a.max(b))
    }

    fn check_shape(&self) -> std::result::Result<(), String> {
        if !(self.domain.lo < self.domain.hi) {
            return Err(format!("empty domain [{}, {})", self.domain.lo, self.domain.hi));
        }
        match &self.map {
            BranchMap::Affine { slope, offset } => {
                if *slope == 0.0 || !slope.is_finite() || !offset.is_finite() {
                    return Err("affine slope must be finite and non-zero".into());
                }
            }
            BranchMap::Square => {
                if self.domain.lo < 0.0 && self.domain.hi > 0.0 {
                    return Err("square branch straddles 0".into());
                }
            }
            BranchMap::NegAbs => {
                if self.domain.hi > 0.0 {
                    return Err("neg_abs branch must lie in r ≤ 0".into());
                }
            }
            BranchMap::SignedPower { p } => {
                if !(*p > 0.0) || !p.is_finite() {
                    return Err("signed power exponent must be positive".into());
                }
            }
            BranchMap::Table { r, z } => {
                if r.len() < 2 || r.len() != z.len() {
                    return Err("table needs ≥ 2 knots of equal length".into());
                }
                if !r.windows(2).all(|w| w[0] < w[1]) {
                    return Err("table r knots must increase".into());
                }
                let inc = z.windows(2).all(|w| w[0] < w[1]);
                let dec = z.windows(2).all(|w| w[0] > w[1]);
                if !(inc || dec) {
                    return Err("table z knots must be strictly monotone".into());
                }
            }
            BranchMap::Custom(_) => {}
        }
        Ok(())
    }
}

/// A constant piece `g(r) = level` for `r ∈ [lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationSet {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl QuantizationSet {
    pub fn interval(&self) -> Interval {
        Interval::new(self.lower, self.upper)
    }
}

/// One solution of `g(r) = z` on a monotone branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub branch: usize,
    pub r: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    InvalidPiece,
    Gap,
    Overlap,
    RoundTrip,
    NotMonotone,
    DuplicateLevel,
    UnboundedQuantization,
}

/// A validation failure over `[lo, hi]` (a single probe when `lo == hi`).
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub lo: f64,
    pub hi: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push_probe(&mut self, kind: ViolationKind, at: f64, detail: String) {
        // Consecutive probes of the same kind and detail collapse into a range.
        if let Some(last) = self.violations.last_mut() {
            if last.kind == kind && last.detail == detail {
                last.hi = at;
                return;
            }
        }
        self.violations.push(Violation {
            kind,
            lo: at,
            hi: at,
            detail,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return f.write_str("valid");
        }
        for v in &self.violations {
            writeln!(f, "{:?} on [{}, {}]: {}", v.kind, v.lo, v.hi, v.detail)?;
        }
        Ok(())
    }
}

pub const VALIDATION_PROBES: usize = 10_000;

/// `g` as a list of monotone branches plus constant pieces.
#[derive(Debug, Clone)]
pub struct PiecewiseNonlinearity {
    pub branches: Vec<MonotoneBranch>,
    pub quant_sets: Vec<QuantizationSet>,
}

impl PiecewiseNonlinearity {
    pub fn new(branches: Vec<MonotoneBranch>, quant_sets: Vec<QuantizationSet>) -> Self {
        PiecewiseNonlinearity { branches, quant_sets }
    }

    /// `g(r) = r`.
    pub fn identity() -> Self {
        Self::new(
            vec![MonotoneBranch::new(
                Interval::REAL_LINE,
                BranchMap::Affine {
                    slope: 1.0,
                    offset: 0.0,
                },
            )],
            vec![],
        )
    }

    /// `g(r) = r²`.
    pub fn square() -> Self {
        Self::new(
            vec![
                MonotoneBranch::new(Interval::new(0.0, f64::INFINITY), BranchMap::Square),
                MonotoneBranch::new(Interval::new(f64::NEG_INFINITY, 0.0), BranchMap::Square),
            ],
            vec![],
        )
    }

    /// `|r|` for `r ≤ 0`, `r²` for `r > 0`.
    pub fn abs_square() -> Self {
        Self::new(
            vec![
                MonotoneBranch::new(Interval::new(f64::NEG_INFINITY, 0.0), BranchMap::NegAbs),
                MonotoneBranch::new(Interval::new(0.0, f64::INFINITY), BranchMap::Square),
            ],
            vec![],
        )
    }

    /// `r + w` below `−w`, `0` on `[−w, w)`, `r − w` from `w`.
    pub fn deadzone(w: f64) -> Self {
        Self::new(
            vec![
                MonotoneBranch::new(
                    Interval::new(f64::NEG_INFINITY, -w),
                    BranchMap::Affine { slope: 1.0, offset: w },
                ),
                MonotoneBranch::new(
                    Interval::new(w, f64::INFINITY),
                    BranchMap::Affine { slope: 1.0, offset: -w },
                ),
            ],
            vec![QuantizationSet {
                lower: -w,
                upper: w,
                level: 0.0,
            }],
        )
    }

    /// `clamp(r, lo, hi)`.
    pub fn saturation(lo: f64, hi: f64) -> Self {
        Self::new(
            vec![MonotoneBranch::new(
                Interval::new(lo, hi),
                BranchMap::Affine {
                    slope: 1.0,
                    offset: 0.0,
                },
            )],
            vec![
                QuantizationSet {
                    lower: f64::NEG_INFINITY,
                    upper: lo,
                    level: lo,
                },
                QuantizationSet {
                    lower: hi,
                    upper: f64::INFINITY,
                    level: hi,
                },
            ],
        )
    }

    /// `max(r, 0)`.
    pub fn rectifier() -> Self {
        Self::new(
            vec![MonotoneBranch::new(
                Interval::new(0.0, f64::INFINITY),
                BranchMap::Affine {
                    slope: 1.0,
                    offset: 0.0,
                },
            )],
            vec![QuantizationSet {
                lower: f64::NEG_INFINITY,
                upper: 0.0,
                level: 0.0,
            }],
        )
    }

    /// Uniform quantizer with `levels` outputs `(j − (levels−1)/2)·step`,
    /// decision boundaries midway between levels, outer cells unbounded.
    pub fn quantizer(levels: usize, step: f64) -> Self {
        let levels = levels.max(1);
        let level = |j: usize| (j as f64 - (levels as f64 - 1.0) / 2.0) * step;
        let quant_sets = (0..levels)
            .map(|j| QuantizationSet {
                lower: if j == 0 {
                    f64::NEG_INFINITY
                } else {
                    level(j) - step / 2.0
                },
                upper: if j + 1 == levels {
                    f64::INFINITY
                } else {
                    level(j) + step / 2.0
                },
                level: level(j),
            })
            .collect();
        Self::new(vec![], quant_sets)
    }

    /// Nonlinearity by preset name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "example1" | "square" => Some(Self::square()),
            "example2" | "abs_square" => Some(Self::abs_square()),
            "example3" | "deadzone" => Some(Self::deadzone(3.0)),
            "saturation" => Some(Self::saturation(-3.0, 3.0)),
            "rectifier" => Some(Self::rectifier()),
            "quantizer" => Some(Self::quantizer(3, 1.0)),
            "identity" => Some(Self::identity()),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 7] = [
        "example1",
        "example2",
        "example3",
        "deadzone",
        "saturation",
        "quantizer",
        "rectifier",
    ];

    /// `g(r)`.
    pub fn evaluate(&self, r: f64) -> Result<f64> {
        if let Some(q) = self.quant_sets.iter().find(|q| q.interval().contains(r)) {
            return Ok(q.level);
        }
        if let Some(b) = self.branches.iter().find(|b| b.domain.contains(r)) {
            return Ok(b.forward(r));
        }
        Err(Error::UncoveredDomainPoint(r))
    }

    /// `g′(r)`: zero on constant pieces, the owning branch's right-hand
    /// derivative elsewhere.
    pub fn derivative(&self, r: f64) -> Result<f64> {
        if self.quant_sets.iter().any(|q| q.interval().contains(r)) {
            return Ok(0.0);
        }
        if let Some(b) = self.branches.iter().find(|b| b.domain.contains(r)) {
            return Ok(b.derivative(r));
        }
        Err(Error::UncoveredDomainPoint(r))
    }

    /// Roots of `g(r) = z` on every branch whose open image holds `z`.
    pub fn monotone_roots(&self, z: f64) -> Vec<Root> {
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.image().contains_open(z))
            .map(|(i, b)| Root {
                branch: i,
                r: b.inverse(z),
                phi: b.inverse_derivative(z),
            })
            .collect()
    }

    /// Constant pieces sorted by level.
    pub fn quantization_preimages(&self) -> Vec<QuantizationSet> {
        let mut q = self.quant_sets.clone();
        q.sort_by(|a, b| a.level.total_cmp(&b.level));
        q
    }

    /// Continuous part of the density of `z = g(r)`, `r ~ N(m, v)`:
    /// `Σᵢ φᵢ(z) N(γᵢ(z); m, v)`.
    pub fn output_density(&self, z: f64, m: f64, v: f64) -> f64 {
        self.monotone_roots(z)
            .iter()
            .map(|root| root.phi * normal_pdf(root.r, m, v))
            .sum()
    }

    /// Point masses of `z = g(r)`, `r ~ N(m, v)`, as `(level, mass)` sorted
    /// by level.
    pub fn output_point_masses(&self, m: f64, v: f64) -> Vec<(f64, f64)> {
        self.quantization_preimages()
            .iter()
            .map(|q| (q.level, normal_interval_mass(q.lower, q.upper, m, v)))
            .collect()
    }

    /// Structural checks plus deterministic grid probing of the partition,
    /// monotonicity and inverse round trip.
    pub fn validate(&self) -> ValidationReport {
        let mut rep = ValidationReport::default();
        for (i, b) in self.branches.iter().enumerate() {
            if let Err(e) = b.check_shape() {
                rep.violations.push(Violation {
                    kind: ViolationKind::InvalidPiece,
                    lo: b.domain.lo,
                    hi: b.domain.hi,
                    detail: format!("branch {i}: {e}"),
                });
            }
        }
        for (j, q) in self.quant_sets.iter().enumerate() {
            if !(q.lower < q.upper) || !q.level.is_finite() {
                rep.violations.push(Violation {
                    kind: ViolationKind::InvalidPiece,
                    lo: q.lower,
                    hi: q.upper,
                    detail: format!("quantization set {j} is empty or has no finite level"),
                });
            }
            if !q.lower.is_finite() && !q.upper.is_finite() {
                // A half-line is integrable under the likelihood mapping; the
                // whole line is a constant map and carries no information.
                rep.violations.push(Violation {
                    kind: ViolationKind::UnboundedQuantization,
                    lo: q.lower,
                    hi: q.upper,
                    detail: format!("quantization set {j} covers the real line"),
                });
            }
            for (k, o) in self.quant_sets.iter().enumerate().skip(j + 1) {
                if o.level == q.level {
                    rep.violations.push(Violation {
                        kind: ViolationKind::DuplicateLevel,
                        lo: q.level,
                        hi: q.level,
                        detail: format!("sets {j} and {k} share level {}", q.level),
                    });
                }
            }
        }
        if !rep.is_valid() {
            return rep;
        }

        let (lo, hi) = self.probe_range();
        let step = (hi - lo) / (VALIDATION_PROBES - 1) as f64;
        let mut last: Vec<Option<(f64, f64)>> = vec![None; self.branches.len()];
        for k in 0..VALIDATION_PROBES {
            let r = lo + step * k as f64;
            let owners: Vec<String> = self
                .branches
                .iter()
                .enumerate()
                .filter(|(_, b)| b.domain.contains(r))
                .map(|(i, _)| format!("branch {i}"))
                .chain(
                    self.quant_sets
                        .iter()
                        .enumerate()
                        .filter(|(_, q)| q.interval().contains(r))
                        .map(|(j, _)| format!("set {j}")),
                )
                .collect();
            match owners.len() {
                0 => rep.push_probe(ViolationKind::Gap, r, "no piece covers".into()),
                1 => {}
                _ => rep.push_probe(ViolationKind::Overlap, r, owners.join(" and ")),
            }
            for (i, b) in self.branches.iter().enumerate() {
                if !b.domain.contains(r) {
                    continue;
                }
                let z = b.forward(r);
                let back = b.inverse(z);
                if !((back - r).abs() <= 1e-10 * r.abs().max(1.0)) {
                    rep.push_probe(ViolationKind::RoundTrip, r, format!("branch {i}: γ(g(r)) ≠ r"));
                }
                if let Some((pz, dir)) = last[i] {
                    let step_dir = (z - pz).signum();
                    if z == pz || (dir != 0.0 && step_dir != dir) {
                        rep.push_probe(ViolationKind::NotMonotone, r, format!("branch {i}"));
                    }
                    last[i] = Some((z, if dir == 0.0 { step_dir } else { dir }));
                } else {
                    last[i] = Some((z, 0.0));
                }
            }
        }
        rep
    }

    /// Probe window: the finite piece endpoints padded by 10 (or `[−10, 10]`).
    fn probe_range(&self) -> (f64, f64) {
        let ends = self
            .branches
            .iter()
            .flat_map(|b| [b.domain.lo, b.domain.hi])
            .chain(self.quant_sets.iter().flat_map(|q| [q.lower, q.upper]))
            .filter(|x| x.is_finite());
        let (lo, hi) = ends.fold((0.0f64, 0.0f64), |(a, b), x| (a.min(x), b.max(x)));
        (lo - 10.0, hi + 10.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn evaluate_examples() {
        assert_eq!(PiecewiseNonlinearity::square().evaluate(3.0).unwrap(), 9.0);
        assert_eq!(PiecewiseNonlinearity::deadzone(3.0).evaluate(1.5).unwrap(), 0.0);
        assert_eq!(PiecewiseNonlinearity::abs_square().evaluate(-2.0).unwrap(), 2.0);
        assert_eq!(PiecewiseNonlinearity::deadzone(3.0).evaluate(-4.0).unwrap(), -1.0);
        assert_eq!(PiecewiseNonlinearity::deadzone(3.0).evaluate(3.0).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_uncovered() {
        let nl = PiecewiseNonlinearity::new(
            vec![MonotoneBranch::new(Interval::new(0.0, 1.0), BranchMap::Square)],
            vec![],
        );
        assert_eq!(nl.evaluate(2.0), Err(Error::UncoveredDomainPoint(2.0)));
    }

    #[test]
    fn boundary_belongs_to_lower_closed_piece() {
        let nl = PiecewiseNonlinearity::saturation(-1.0, 1.0);
        assert_eq!(nl.evaluate(-1.0).unwrap(), -1.0);
        assert_eq!(nl.evaluate(1.0).unwrap(), 1.0);
        assert_eq!(nl.derivative(-1.0).unwrap(), 1.0);
        assert_eq!(nl.derivative(1.0).unwrap(), 0.0);
    }

    #[test]
    fn square_roots() {
        let roots = PiecewiseNonlinearity::square().monotone_roots(4.0);
        assert_eq!(roots.len(), 2);
        assert_eq!((roots[0].r, roots[0].phi), (2.0, 0.25));
        assert_eq!((roots[1].r, roots[1].phi), (-2.0, 0.25));
    }

    #[test]
    fn deadzone_roots() {
        let roots = PiecewiseNonlinearity::deadzone(3.0).monotone_roots(2.0);
        assert_eq!(roots.len(), 1);
        assert_eq!((roots[0].branch, roots[0].r, roots[0].phi), (1, 5.0, 1.0));
        assert!(PiecewiseNonlinearity::square().monotone_roots(-1.0).is_empty());
    }

    #[test]
    fn abs_square_roots() {
        let roots = PiecewiseNonlinearity::abs_square().monotone_roots(4.0);
        assert_eq!(roots.len(), 2);
        assert_eq!((roots[0].r, roots[0].phi), (-4.0, 1.0));
        assert_eq!((roots[1].r, roots[1].phi), (2.0, 0.25));
    }

    #[test]
    fn preimages() {
        assert_eq!(
            PiecewiseNonlinearity::deadzone(3.0).quantization_preimages(),
            vec![QuantizationSet {
                lower: -3.0,
                upper: 3.0,
                level: 0.0
            }]
        );
        assert!(PiecewiseNonlinearity::square().quantization_preimages().is_empty());
        let q = PiecewiseNonlinearity::quantizer(3, 1.0).quantization_preimages();
        assert_eq!(q.len(), 3);
        for w in q.windows(2) {
            assert_eq!(w[0].upper, w[1].lower);
            assert!(w[0].level < w[1].level);
        }
    }

    #[test]
    fn presets_are_valid() {
        for name in PiecewiseNonlinearity::PRESETS {
            let rep = PiecewiseNonlinearity::preset(name).unwrap().validate();
            assert!(rep.is_valid(), "{name}: {rep}");
        }
    }

    #[test]
    fn overlap_is_reported_on_shared_interval() {
        let nl = PiecewiseNonlinearity::new(
            vec![
                MonotoneBranch::new(
                    Interval::new(f64::NEG_INFINITY, 1.0),
                    BranchMap::Affine {
                        slope: 1.0,
                        offset: 0.0,
                    },
                ),
                MonotoneBranch::new(
                    Interval::new(0.0, f64::INFINITY),
                    BranchMap::Affine {
                        slope: 2.0,
                        offset: 0.0,
                    },
                ),
            ],
            vec![],
        );
        let rep = nl.validate();
        let ov: Vec<_> = rep
            .violations
            .iter()
            .filter(|v| v.kind == ViolationKind::Overlap)
            .collect();
        assert_eq!(ov.len(), 1);
        assert!(ov[0].lo >= 0.0 && ov[0].lo < 0.01);
        assert!(ov[0].hi < 1.0 && ov[0].hi > 0.99);
    }

    #[test]
    fn gap_is_reported() {
        let nl = PiecewiseNonlinearity::new(
            vec![MonotoneBranch::new(
                Interval::new(0.0, f64::INFINITY),
                BranchMap::Square,
            )],
            vec![],
        );
        assert!(nl.validate().has(ViolationKind::Gap));
    }

    #[test]
    fn corrupted_inverse_fails_round_trip() {
        let nl = PiecewiseNonlinearity::new(
            vec![MonotoneBranch::new(
                Interval::REAL_LINE,
                BranchMap::Custom(CustomMap {
                    forward: |r| 2.0 * r,
                    derivative: |_| 2.0,
                    inverse: |z| z / 2.0 + 0.1,
                    inverse_derivative: |_| 0.5,
                }),
            )],
            vec![],
        );
        assert!(nl.validate().has(ViolationKind::RoundTrip));
    }

    #[test]
    fn whole_line_constant_is_rejected() {
        let nl = PiecewiseNonlinearity::quantizer(1, 1.0);
        assert!(nl.validate().has(ViolationKind::UnboundedQuantization));
    }

    #[test]
    fn table_and_power_branches() {
        let b = MonotoneBranch::new(
            Interval::REAL_LINE,
            BranchMap::Table {
                r: vec![-1.0, 0.0, 2.0],
                z: vec![3.0, 1.0, 0.0],
            },
        );
        assert_abs_diff_eq!(b.forward(1.0), 0.5);
        assert_abs_diff_eq!(b.inverse(0.5), 1.0);
        assert_abs_diff_eq!(b.inverse(2.0), -0.5);
        assert_abs_diff_eq!(b.inverse_derivative(2.0), 0.5);
        assert_abs_diff_eq!(b.inverse(-1.0), 4.0);
        assert_eq!(b.image(), Interval::REAL_LINE);

        let p = MonotoneBranch::new(Interval::REAL_LINE, BranchMap::SignedPower { p: 3.0 });
        assert_abs_diff_eq!(p.forward(-2.0), -8.0);
        assert_abs_diff_eq!(p.inverse(-8.0), -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.inverse_derivative(8.0), 1.0 / 12.0, epsilon = 1e-14);
    }

    fn all_catalog_branches() -> Vec<MonotoneBranch> {
        let mut v: Vec<MonotoneBranch> = ["example1", "example2", "example3", "saturation", "rectifier"]
            .iter()
            .flat_map(|n| PiecewiseNonlinearity::preset(n).unwrap().branches)
            .collect();
        v.push(MonotoneBranch::new(
            Interval::REAL_LINE,
            BranchMap::SignedPower { p: 3.0 },
        ));
        v.push(MonotoneBranch::new(
            Interval::REAL_LINE,
            BranchMap::SignedPower { p: 0.5 },
        ));
        v.push(MonotoneBranch::new(
            Interval::new(-5.0, 5.0),
            BranchMap::Table {
                r: vec![-5.0, -1.0, 0.5, 5.0],
                z: vec![-2.0, 0.0, 3.0, 4.0],
            },
        ));
        v
    }

    /// Sample points strictly inside a branch image, away from kinks.
    fn image_samples(b: &MonotoneBranch, count: usize) -> Vec<f64> {
        let img = b.image();
        let lo = if img.lo.is_finite() {
            img.lo
        } else {
            img.hi.min(0.0) - 20.0
        };
        let hi = if img.hi.is_finite() {
            img.hi
        } else {
            img.lo.max(0.0) + 20.0
        };
        (0..count)
            .map(|k| lo + (hi - lo) * (k as f64 + 0.5) / count as f64)
            .filter(|z| z.abs() > 1e-3)
            .collect()
    }

    #[test]
    fn phi_matches_finite_difference() {
        let h = 1e-6;
        for b in all_catalog_branches() {
            for z in image_samples(&b, 100) {
                if let BranchMap::Table { z: zk, .. } = &b.map {
                    if zk.iter().any(|k| (k - z).abs() < 2.0 * h) {
                        continue;
                    }
                }
                let fd = (b.inverse(z + h) - b.inverse(z)).abs() / h;
                let phi = b.inverse_derivative(z);
                assert!(
                    (fd - phi).abs() <= 1e-4 * phi.max(1.0),
                    "{:?} at z={z}: fd {fd} vs φ {phi}",
                    b.map
                );
                assert_abs_diff_eq!(b.log_inverse_derivative(z), phi.ln(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn evaluate_after_inverse_is_identity() {
        for b in all_catalog_branches() {
            for z in image_samples(&b, 100) {
                let r = b.inverse(z);
                assert!(b.domain.contains(r) || r == b.domain.hi);
                assert!((b.forward(r) - z).abs() <= 1e-10 * z.abs().max(1.0));
            }
        }
    }
}
