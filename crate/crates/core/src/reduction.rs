//! Mixture reduction by greedy pairwise joining.
//!
//! The pair cost is Runnalls' upper bound on the KL divergence between the
//! mixture before and after merging the pair. Costs are cached in a matrix
//! with a per-row minimum, so a reduction from `M` to `cap` components costs
//! `O(M²)` pair evaluations instead of `O(M³)`.

use nalgebra::{DMatrix, DVector};

use crate::gauss::{Gaussian, GaussianMixture, WeightedGaussian};
use crate::linalg;

struct Slot {
    w: f64,
    mean: Vec<f64>,
    cov: Vec<f64>,
    log_det: Option<f64>,
}

/// Moment-matched merge of two weighted components (`w` need not sum to 1).
fn merge(a: &Slot, b: &Slot, n: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let w = a.w + b.w;
    let (fa, fb) = (a.w / w, b.w / w);
    let mean: Vec<f64> = (0..n).map(|k| fa * a.mean[k] + fb * b.mean[k]).collect();
    let d: Vec<f64> = (0..n).map(|k| a.mean[k] - b.mean[k]).collect();
    let mut cov = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            cov[r * n + c] = fa * a.cov[r * n + c] + fb * b.cov[r * n + c] + fa * fb * d[r] * d[c];
        }
    }
    for r in 0..n {
        for c in (r + 1)..n {
            let m = 0.5 * (cov[r * n + c] + cov[c * n + r]);
            cov[r * n + c] = m;
            cov[c * n + r] = m;
        }
    }
    (w, mean, cov)
}

/// `log det` of the merged covariance for a fixed small dimension, by a
/// Cholesky pass that multiplies the pivots.
fn merged_log_det<const N: usize>(a: &Slot, b: &Slot, fa: f64, fb: f64) -> Option<f64> {
    let f = fa * fb;
    let mut l = [[0.0f64; N]; N];
    let mut d = [0.0f64; N];
    for r in 0..N {
        d[r] = a.mean[r] - b.mean[r];
    }
    for r in 0..N {
        for c in 0..=r {
            l[r][c] = fa * a.cov[r * N + c] + fb * b.cov[r * N + c] + f * d[r] * d[c];
        }
    }
    let mut prod = 1.0;
    for j in 0..N {
        let mut p = l[j][j];
        for k in 0..j {
            p -= l[j][k] * l[j][k];
        }
        if !(p > 0.0) {
            return None;
        }
        prod *= p;
        let s = p.sqrt();
        l[j][j] = s;
        for i in (j + 1)..N {
            let mut v = l[i][j];
            for k in 0..j {
                v -= l[i][k] * l[j][k];
            }
            l[i][j] = v / s;
        }
    }
    if prod > 0.0 && prod.is_finite() {
        Some(prod.ln())
    } else {
        Some((0..N).map(|j| 2.0 * l[j][j].ln()).sum())
    }
}

fn cost(a: &Slot, b: &Slot, n: usize) -> f64 {
    let (Some(la), Some(lb)) = (a.log_det, b.log_det) else {
        return f64::INFINITY;
    };
    let w = a.w + b.w;
    let (fa, fb) = (a.w / w, b.w / w);
    let lm = match n {
        1 => merged_log_det::<1>(a, b, fa, fb),
        2 => merged_log_det::<2>(a, b, fa, fb),
        3 => merged_log_det::<3>(a, b, fa, fb),
        4 => merged_log_det::<4>(a, b, fa, fb),
        5 => merged_log_det::<5>(a, b, fa, fb),
        6 => merged_log_det::<6>(a, b, fa, fb),
        7 => merged_log_det::<7>(a, b, fa, fb),
        8 => merged_log_det::<8>(a, b, fa, fb),
        _ => {
            let (_, _, cov) = merge(a, b, n);
            linalg::log_det_small(&cov, n)
        }
    };
    match lm {
        Some(lm) => 0.5 * (w * lm - a.w * la - b.w * lb),
        None => f64::INFINITY,
    }
}

/// Lower bound on `cost` without a factorization. Concavity of `log det`
/// removes the covariance spread, Cauchy-Schwarz gives
/// `d'S^-1 d >= |d|^4 / d'S d` for the pooled covariance `S`, and
/// `ln(1 + x) >= 2x / (2 + x)`. Returns `(value, is_exact)`.
fn cost_bound(a: &Slot, b: &Slot, n: usize) -> (f64, bool) {
    if a.log_det.is_none() || b.log_det.is_none() {
        return (f64::INFINITY, true);
    }
    let w = a.w + b.w;
    let (fa, fb) = (a.w / w, b.w / w);
    let q = match n {
        1 => quad_terms::<1>(a, b),
        2 => quad_terms::<2>(a, b),
        3 => quad_terms::<3>(a, b),
        4 => quad_terms::<4>(a, b),
        5 => quad_terms::<5>(a, b),
        6 => quad_terms::<6>(a, b),
        7 => quad_terms::<7>(a, b),
        8 => quad_terms::<8>(a, b),
        _ => return (cost(a, b, n), true),
    };
    let (d2, sa, sb) = q;
    if d2 == 0.0 {
        return (0.0, false);
    }
    let x = fa * fb * d2 * d2 / (fa * sa + fb * sb);
    if !(x.is_finite() && x >= 0.0) {
        return (cost(a, b, n), true);
    }
    (w * x / (2.0 + x), false)
}

/// `(|d|^2, d'A d, d'B d)` for the mean difference `d`.
#[inline(always)]
fn quad_terms<const N: usize>(a: &Slot, b: &Slot) -> (f64, f64, f64) {
    let am: &[f64; N] = a.mean[..N].try_into().unwrap();
    let bm: &[f64; N] = b.mean[..N].try_into().unwrap();
    let ac = &a.cov[..N * N];
    let bc = &b.cov[..N * N];
    let mut d = [0.0f64; N];
    let mut d2 = 0.0;
    for k in 0..N {
        d[k] = am[k] - bm[k];
        d2 += d[k] * d[k];
    }
    // symmetric: diagonal once, upper triangle twice
    let (mut sa, mut sb) = (0.0, 0.0);
    for r in 0..N {
        let (mut ra, mut rb) = (0.5 * ac[r * N + r] * d[r], 0.5 * bc[r * N + r] * d[r]);
        for c in (r + 1)..N {
            ra += ac[r * N + c] * d[c];
            rb += bc[r * N + c] * d[c];
        }
        sa += d[r] * ra;
        sb += d[r] * rb;
    }
    let (sa, sb) = (2.0 * sa, 2.0 * sb);
    (d2, sa, sb)
}

/// Runnalls pair cost `B(i,j)` for two weighted Gaussians (linear weights).
pub fn runnalls_cost(wi: f64, gi: &Gaussian, wj: f64, gj: &Gaussian) -> f64 {
    let n = gi.dim();
    let a = slot(wi, gi);
    let b = slot(wj, gj);
    cost(&a, &b, n)
}

fn slot(w: f64, g: &Gaussian) -> Slot {
    let n = g.dim();
    let cov: Vec<f64> = g.cov.transpose().as_slice().to_vec();
    Slot {
        w,
        mean: g.mean.as_slice().to_vec(),
        log_det: linalg::log_det_small(&cov, n),
        cov,
    }
}

/// Min-tree over per-row best costs; ties go to the lower row and rows
/// without a partner never win.
struct Tournament {
    size: usize,
    // (cost, row, eligible)
    node: Vec<(f64, usize, bool)>,
}

impl Tournament {
    fn new(len: usize) -> Self {
        let size = len.next_power_of_two().max(1);
        Tournament {
            size,
            node: vec![(f64::INFINITY, usize::MAX, false); 2 * size],
        }
    }

    fn better(a: (f64, usize, bool), b: (f64, usize, bool)) -> (f64, usize, bool) {
        match (a.2, b.2) {
            (true, false) => a,
            (false, true) => b,
            _ if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) => b,
            _ => a,
        }
    }

    fn set(&mut self, i: usize, cost: f64, eligible: bool) {
        let mut p = self.size + i;
        self.node[p] = (cost, i, eligible);
        while p > 1 {
            p /= 2;
            self.node[p] = Self::better(self.node[2 * p], self.node[2 * p + 1]);
        }
    }

    fn top(&self) -> Option<usize> {
        let t = self.node[1];
        t.2.then_some(t.1)
    }
}

/// Greedily merges the Runnalls-cheapest pair until at most `max_components`
/// remain. Total weight and the mixture's first two moments are preserved at
/// every merge. Ties resolve to the lowest `(i, j)`; survivors keep their
/// relative order, a merged pair occupying the slot of its first member.
pub fn reduce_by_joining(m: &GaussianMixture, max_components: usize) -> GaussianMixture {
    let max_components = max_components.max(1);
    if m.len() <= max_components {
        return m.clone();
    }
    let log_total = m.log_total_weight();
    let n = m.dim();
    let mut slots: Vec<Option<Slot>> = m
        .components()
        .iter()
        .map(|c| Some(slot((c.log_weight - log_total).exp(), &c.gaussian)))
        .collect();

    // Upper-triangular matrix holding exact costs or lower bounds. A bound is
    // refined only when it is the current minimum, which leaves the greedy
    // order unchanged while skipping most factorizations.
    let len = slots.len();
    let mut costs = vec![f64::INFINITY; len * len];
    let mut exact = vec![true; len * len];
    for i in 0..len {
        let a = slots[i].as_ref().unwrap();
        for j in (i + 1)..len {
            let (c, e) = cost_bound(a, slots[j].as_ref().unwrap(), n);
            costs[i * len + j] = c;
            exact[i * len + j] = e;
        }
    }
    // dead rows and columns are set to infinity, so scans need no liveness test
    let mut live = vec![true; len];
    let row_best = |costs: &[f64], live: &[bool], i: usize| -> (f64, usize) {
        let row = &costs[i * len..(i + 1) * len];
        let mut best = (f64::INFINITY, usize::MAX);
        for (j, &c) in row.iter().enumerate().skip(i + 1) {
            if c < best.0 {
                best = (c, j);
            }
        }
        if best.1 == usize::MAX {
            // all remaining partners infinite: keep the first live one
            best.1 = ((i + 1)..len).find(|&j| live[j]).unwrap_or(usize::MAX);
        }
        best
    };
    let mut best: Vec<(f64, usize)> = (0..len).map(|i| row_best(&costs, &live, i)).collect();
    let mut rows = Tournament::new(len);
    for (i, &(c, j)) in best.iter().enumerate() {
        rows.set(i, c, j != usize::MAX);
    }

    let mut alive = len;
    while alive > max_components {
        // lowest value, then lowest i; rows keep their lowest j
        let Some(i) = rows.top() else { break };
        let j = best[i].1;
        if !exact[i * len + j] {
            // refinement only raises the entry, so rescanning row i suffices
            costs[i * len + j] = cost(slots[i].as_ref().unwrap(), slots[j].as_ref().unwrap(), n);
            exact[i * len + j] = true;
            best[i] = row_best(&costs, &live, i);
            rows.set(i, best[i].0, best[i].1 != usize::MAX);
            continue;
        }
        let b = slots[j].take().unwrap();
        live[j] = false;
        rows.set(j, f64::INFINITY, false);
        for k in 0..j {
            costs[k * len + j] = f64::INFINITY;
        }
        for k in (j + 1)..len {
            costs[j * len + k] = f64::INFINITY;
        }
        let a = slots[i].as_mut().unwrap();
        let (w, mean, cov) = merge(a, &b, n);
        a.w = w;
        a.log_det = linalg::log_det_small(&cov, n);
        a.mean = mean;
        a.cov = cov;
        alive -= 1;
        if alive <= max_components {
            break;
        }
        let a = slots[i].as_ref().unwrap();
        for k in 0..len {
            if k == i || !live[k] {
                continue;
            }
            let o = slots[k].as_ref().unwrap();
            let idx = if k < i { k * len + i } else { i * len + k };
            let (c, e) = if k < i {
                cost_bound(o, a, n)
            } else {
                cost_bound(a, o, n)
            };
            costs[idx] = c;
            exact[idx] = e;
        }
        best[i] = row_best(&costs, &live, i);
        rows.set(i, best[i].0, best[i].1 != usize::MAX);
        for k in 0..i {
            if !live[k] {
                continue;
            }
            let c = costs[k * len + i];
            let old = best[k];
            if best[k].1 == i || best[k].1 == j {
                best[k] = row_best(&costs, &live, k);
            } else if c < best[k].0 || (c == best[k].0 && i < best[k].1) {
                best[k] = (c, i);
            }
            if best[k] != old {
                rows.set(k, best[k].0, best[k].1 != usize::MAX);
            }
        }
        for k in (i + 1)..j.min(len) {
            if live[k] && best[k].1 == j {
                best[k] = row_best(&costs, &live, k);
                rows.set(k, best[k].0, best[k].1 != usize::MAX);
            }
        }
    }

    let comps = slots
        .into_iter()
        .flatten()
        .map(|s| {
            WeightedGaussian::new(
                s.w.ln() + log_total,
                Gaussian {
                    mean: DVector::from_vec(s.mean),
                    cov: DMatrix::from_row_slice(n, n, &s.cov),
                },
            )
        })
        .collect();
    GaussianMixture::from_parts(comps, m.is_normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::mixture_moments;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar_mix(parts: &[(f64, f64, f64)]) -> GaussianMixture {
        GaussianMixture::normalized(
            parts
                .iter()
                .map(|&(w, m, v)| WeightedGaussian::new(w.ln(), Gaussian::scalar(m, v)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_pair_collapses() {
        let m = scalar_mix(&[(0.5, 1.0, 2.0), (0.5, 1.0, 2.0)]);
        let r = reduce_by_joining(&m, 1);
        assert_eq!(r.len(), 1);
        let c = &r.components()[0];
        assert_abs_diff_eq!(c.log_weight, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.gaussian.mean[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.gaussian.cov[(0, 0)], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn far_pair_moment_match() {
        let m = scalar_mix(&[(0.5, 0.0, 1.0), (0.5, 10.0, 1.0)]);
        let r = reduce_by_joining(&m, 1);
        let g = &r.components()[0].gaussian;
        assert_abs_diff_eq!(g.mean[0], 5.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.cov[(0, 0)], 26.0, epsilon = 1e-12);
    }

    #[test]
    fn no_op_when_under_cap() {
        let m = scalar_mix(&[(0.3, 0.0, 1.0), (0.7, 2.0, 1.0)]);
        assert_eq!(reduce_by_joining(&m, 5), m);
    }

    #[test]
    fn unnormalized_total_weight_is_kept() {
        let m = GaussianMixture::new(vec![
            WeightedGaussian::new(-700.0, Gaussian::scalar(0.0, 1.0)),
            WeightedGaussian::new(-701.0, Gaussian::scalar(1.0, 1.0)),
            WeightedGaussian::new(-702.0, Gaussian::scalar(3.0, 1.0)),
        ]);
        let r = reduce_by_joining(&m, 1);
        assert_abs_diff_eq!(r.log_total_weight(), m.log_total_weight(), epsilon = 1e-12);
        assert!(!r.is_normalized());
    }

    #[test]
    fn ties_resolve_to_lowest_pair() {
        // Three equally spaced equal components: (0,1) and (1,2) tie.
        let m = scalar_mix(&[(1.0, 0.0, 1.0), (1.0, 1.0, 1.0), (1.0, 2.0, 1.0)]);
        let r = reduce_by_joining(&m, 2);
        assert_abs_diff_eq!(r.components()[0].gaussian.mean[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(r.components()[1].gaussian.mean[0], 2.0, epsilon = 1e-14);
    }

    fn rel_close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn twelve_to_four_preserves_moments() {
        let parts: Vec<(f64, f64, f64)> = (0..12)
            .map(|k| {
                let k = k as f64;
                (1.0 + (k * 0.7).sin().abs(), 3.0 * (k * 1.3).cos(), 0.2 + 0.1 * k)
            })
            .collect();
        let m = scalar_mix(&parts);
        let before = mixture_moments(&m).unwrap();
        let r = reduce_by_joining(&m, 4);
        assert_eq!(r.len(), 4);
        let after = mixture_moments(&r).unwrap();
        assert!(rel_close(before.mean[0], after.mean[0]));
        assert!(rel_close(before.cov[(0, 0)], after.cov[(0, 0)]));
    }

    fn arb_mixture(n: usize) -> impl Strategy<Value = GaussianMixture> {
        prop::collection::vec(
            (
                0.05f64..1.0,
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-1.0f64..1.0, n * n),
            ),
            2..16,
        )
        .prop_map(move |comps| {
            GaussianMixture::normalized(
                comps
                    .into_iter()
                    .map(|(w, mu, a)| {
                        let a = DMatrix::from_row_slice(n, n, &a);
                        let cov = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
                        WeightedGaussian::new(w.ln(), Gaussian::new(DVector::from_vec(mu), cov).unwrap())
                    })
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn each_merge_preserves_moments(m in (1usize..4).prop_flat_map(arb_mixture)) {
            let mut cur = m.clone();
            let reference = mixture_moments(&m).unwrap();
            while cur.len() > 1 {
                cur = reduce_by_joining(&cur, cur.len() - 1);
                cur.check_normalized().unwrap();
                let mom = mixture_moments(&cur).unwrap();
                let scale = reference.cov.amax().max(reference.mean.amax()).max(1.0);
                prop_assert!((mom.mean.clone() - &reference.mean).amax() <= 1e-12 * scale);
                prop_assert!((mom.cov.clone() - &reference.cov).amax() <= 1e-12 * scale);
                for c in cur.components() {
                    c.gaussian.check_invariants().unwrap();
                }
            }
        }

        #[test]
        fn batch_reduction_matches_moment_totals(m in arb_mixture(2), cap in 1usize..6) {
            let r = reduce_by_joining(&m, cap);
            prop_assert!(r.len() <= cap.max(1));
            let a = mixture_moments(&m).unwrap();
            let b = mixture_moments(&r).unwrap();
            let scale = a.cov.amax().max(a.mean.amax()).max(1.0);
            prop_assert!((a.mean - b.mean).amax() <= 1e-12 * scale);
            prop_assert!((a.cov - b.cov).amax() <= 1e-12 * scale);
        }
    }
}
