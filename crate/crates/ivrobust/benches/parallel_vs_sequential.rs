//! Criterion benchmarks comparing data-parallel and sequential execution
//! of the replicate-level workloads (Monte Carlo and bootstrap).
//!
//! With the `parallel` feature (the default), the comparison runs the same
//! workload inside a one-thread rayon pool and inside a pool sized to the
//! machine; results are bit-identical by construction, so the benchmark
//! isolates the scheduling cost. Compiled with `--no-default-features` the
//! suite benchmarks the plain sequential code path.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use ivrobust::simulator::{run_monte_carlo, DgpConfig, MonteCarloOptions};
use ivrobust::{bootstrap_t, build_design, draw_sample, ModelSpec};

fn bench_config() -> DgpConfig {
    let mut cfg = DgpConfig::heterogeneous_default();
    cfg.n = 500;
    cfg
}

fn monte_carlo_workload() -> f64 {
    let cfg = bench_config();
    let report = run_monte_carlo(&cfg, 64, MonteCarloOptions::default(), 42).unwrap();
    report.mean_rho
}

fn bootstrap_workload() -> f64 {
    let mut cfg = bench_config();
    cfg.seed = 7;
    let data = draw_sample(&cfg).unwrap();
    let spec = ModelSpec::new("Y", vec!["D".into()], vec!["Z1".into(), "Z2".into()]);
    let design = build_design(&data, &spec).unwrap();
    let result = bootstrap_t(&design, 1, 199, 3, false).unwrap();
    result.t_stats[0]
}

#[cfg(feature = "parallel")]
fn bench_workloads(c: &mut Criterion) {
    let sequential_pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let parallel_pool = rayon::ThreadPoolBuilder::new().build().unwrap();

    let mut group = c.benchmark_group("monte_carlo_r64_n500");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| sequential_pool.install(|| black_box(monte_carlo_workload())))
    });
    group.bench_function("parallel", |b| {
        b.iter(|| parallel_pool.install(|| black_box(monte_carlo_workload())))
    });
    group.finish();

    let mut group = c.benchmark_group("bootstrap_b199_n500");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| sequential_pool.install(|| black_box(bootstrap_workload())))
    });
    group.bench_function("parallel", |b| {
        b.iter(|| parallel_pool.install(|| black_box(bootstrap_workload())))
    });
    group.finish();
}

#[cfg(not(feature = "parallel"))]
fn bench_workloads(c: &mut Criterion) {
    let mut group = c.benchmark_group("monte_carlo_r64_n500");
    group.sample_size(10);
    group.bench_function("sequential_only", |b| {
        b.iter(|| black_box(monte_carlo_workload()))
    });
    group.finish();

    let mut group = c.benchmark_group("bootstrap_b199_n500");
    group.sample_size(10);
    group.bench_function("sequential_only", |b| {
        b.iter(|| black_box(bootstrap_workload()))
    });
    group.finish();
}

criterion_group!(benches, bench_workloads);
criterion_main!(benches);
