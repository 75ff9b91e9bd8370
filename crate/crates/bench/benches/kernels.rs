use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use qgs_core::gauss::{Gaussian, GaussianMixture, WeightedGaussian};
use qgs_core::likelihood::likelihood_mixture;
use qgs_core::model::WienerModel;
use qgs_core::nonlinearity::PiecewiseNonlinearity;
use qgs_core::reduction::reduce_by_joining;

/// Deterministic spread of `k` components in `n` dimensions.
fn mixture(n: usize, k: usize) -> GaussianMixture {
    let comps = (0..k)
        .map(|i| {
            let mean = DVector::from_fn(n, |j, _| ((i * 7 + j * 3) % 11) as f64 * 0.4 - 2.0);
            let cov = DMatrix::from_fn(n, n, |a, b| if a == b { 0.5 + 0.05 * (i % 5) as f64 } else { 0.1 });
            WeightedGaussian::new(-((i % 13) as f64) * 0.3, Gaussian::new(mean, cov).unwrap())
        })
        .collect();
    GaussianMixture::normalized(comps).unwrap()
}

fn reduction(c: &mut Criterion) {
    let mut group = c.benchmark_group("reduce_by_joining_to_10");
    for (n, k) in [(1, 200), (2, 200), (4, 200), (4, 400)] {
        let m = mixture(n, k);
        group.bench_with_input(BenchmarkId::new(format!("n{n}"), k), &m, |b, m| {
            b.iter(|| reduce_by_joining(m, 10))
        });
    }
    group.finish();
}

fn likelihood(c: &mut Criterion) {
    let model = WienerModel::example3();
    let nl = PiecewiseNonlinearity::deadzone(3.0);
    let mut group = c.benchmark_group("likelihood_mixture");
    for l in [10, 40] {
        group.bench_with_input(BenchmarkId::from_parameter(l), &l, |b, &l| {
            b.iter(|| likelihood_mixture(&model, &nl, 1.3, l, l).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, reduction, likelihood);
criterion_main!(benches);
