use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array1;
use probhess::linalg::{cholesky, thin_svd_product, woodbury_solve};
use probhess::{estimate_parameters, infer_noisy, run_inference, EstimationMode, SolverConfig};
use probhess_bench::*;
use std::hint::black_box;

fn linalg(c: &mut Criterion) {
    let mut group = c.benchmark_group("linalg");
    for &(n, m) in &[(253, 16), (2762, 16)] {
        let mut r = rng(1);
        let pair = factor_pair(&mut r, n, m);
        let rhs = uniform_vector(&mut r, n);
        group.bench_with_input(BenchmarkId::new("woodbury_solve", n), &n, |b, _| {
            b.iter(|| woodbury_solve(black_box(2.0), &pair, &rhs).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("thin_svd_product", n), &n, |b, _| {
            b.iter(|| thin_svd_product(black_box(&pair)).unwrap())
        });
    }
    let mut r = rng(2);
    let m = spd(&mut r, 253, 1e6);
    group.bench_function("cholesky/253", |b| b.iter(|| cholesky(black_box(&m)).unwrap()));
    group.finish();
}

fn inference(c: &mut Criterion) {
    let mut group = c.benchmark_group("inference");
    for &m in &[4, 16] {
        let (prior, noise, obs) = observations(&mut rng(3), 253, m, 0.1);
        group.bench_with_input(BenchmarkId::new("infer_noisy", m), &m, |b, _| {
            b.iter(|| infer_noisy(&prior, &noise, black_box(&obs)).unwrap())
        });
    }
    let mut r = rng(4);
    let mut oracle = quadratic(&mut r, 253);
    let w = Array1::zeros(253);
    let est = estimate_parameters(&mut oracle, &w, 5, EstimationMode::Full).unwrap();
    let config = SolverConfig {
        iterations: 16,
        ..SolverConfig::default()
    };
    group.bench_function("run_inference/253x16", |b| {
        b.iter(|| run_inference(&mut oracle, black_box(&w), &est, &config).unwrap())
    });
    group.finish();
}

fn precond(c: &mut Criterion) {
    let mut group = c.benchmark_group("precond");
    for &(n, k) in &[(253, 16), (2762, 16), (100_000, 4)] {
        let mut r = rng(5);
        let p = preconditioner(&mut r, n, k);
        let g = uniform_vector(&mut r, n);
        group.bench_with_input(BenchmarkId::new("apply_p_squared", format!("{n}x{k}")), &n, |b, _| {
            b.iter(|| p.apply_p_squared(black_box(&g)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, linalg, inference, precond);
criterion_main!(benches);
