//! Default worker pool against a single worker for the two hot loops:
//! forest fitting (trees in parallel) and SHAP over many rows.

use std::hint::black_box;

use agroval::explain::shap_rows;
use agroval::models::{fit_random_forest, ModelParams};
use agroval::par;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let y = x.iter().map(|v| v[0] + v[1] * v[2] + (2.0 * v[3]).sin()).collect();
    let names = (0..d).map(|i| format!("f{i}")).collect();
    (x, y, names)
}

fn bench(c: &mut Criterion) {
    let (x, y, names) = data(1500, 12);
    let params = ModelParams::rf(32, 8, 2);

    let mut g = c.benchmark_group("forest_fit");
    g.sample_size(10);
    g.bench_function("pool", |b| {
        b.iter(|| fit_random_forest(black_box(&x), &y, &names, &params, 1).unwrap())
    });
    g.bench_function("sequential", |b| {
        b.iter(|| par::with_jobs(1, || fit_random_forest(black_box(&x), &y, &names, &params, 1).unwrap()))
    });
    g.finish();

    let model = fit_random_forest(&x, &y, &names, &params, 1).unwrap();
    let rows = &x[..300];
    let mut g = c.benchmark_group("shap_rows");
    g.sample_size(10);
    g.bench_function("pool", |b| b.iter(|| shap_rows(&model, black_box(rows)).unwrap()));
    g.bench_function("sequential", |b| {
        b.iter(|| par::with_jobs(1, || shap_rows(&model, black_box(rows)).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
