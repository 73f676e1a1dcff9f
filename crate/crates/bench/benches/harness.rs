//! Criterion benchmarks for the numerically hot paths: RDP accounting,
//! the DM transform, ROC construction, and exact binomial bounds.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use privaudit_core::accountant::{default_order_grid, rdp_subsampled_gaussian, rdp_to_dp};
use privaudit_core::condense::{condense_dm_linear, init_gaussian_centered};
use privaudit_core::data::{generate_universe, UniverseSpec};
use privaudit_core::metrics::{clopper_pearson, roc_curve};
use privaudit_core::seed;

fn bench_accountant(c: &mut Criterion) {
    let orders = default_order_grid();
    c.bench_function("rdp_subsampled_gaussian q=0.01", |b| {
        b.iter(|| {
            let curve =
                rdp_subsampled_gaussian(black_box(0.01), black_box(1.1), 1000, &orders).unwrap();
            rdp_to_dp(&curve, 1e-5).unwrap()
        })
    });
    c.bench_function("rdp_subsampled_gaussian fractional orders", |b| {
        let fractional = [1.25, 1.5, 2.5, 7.5, 31.5];
        b.iter(|| rdp_subsampled_gaussian(black_box(0.05), 0.9, 10, &fractional).unwrap())
    });
}

fn bench_condense(c: &mut Criterion) {
    let u = generate_universe(&UniverseSpec {
        n: 10_000,
        d: 32,
        k: 2,
        separation: 2.0,
        noise: 1.0,
        seed: 1,
    })
    .unwrap();
    let init = init_gaussian_centered(100, 32, 2).unwrap();
    c.bench_function("dm_linear 100x32 over 10k", |b| {
        b.iter(|| condense_dm_linear(black_box(&init), u.as_dataset()).unwrap())
    });
}

fn bench_metrics(c: &mut Criterion) {
    use rand::Rng;
    let mut rng = seed::rng(3);
    let scores: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
    let bits: Vec<bool> = (0..100_000).map(|_| rng.random::<f64>() < 0.5).collect();
    c.bench_function("roc_curve 100k", |b| {
        b.iter(|| roc_curve(black_box(&scores), black_box(&bits)).unwrap())
    });
    c.bench_function("clopper_pearson n=1000", |b| {
        b.iter(|| clopper_pearson(black_box(237), 1000, 0.95).unwrap())
    });
}

criterion_group!(benches, bench_accountant, bench_condense, bench_metrics);
criterion_main!(benches);
