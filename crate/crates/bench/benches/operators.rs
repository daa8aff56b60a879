//! Timings of the core operators and solvers.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use taumfg::{lax, push_smooth, solve_hj, solve_mfg, GridFunction, HeatKernel};
use taumfg_bench::{log_model, planar_model, test_function};

fn operators(c: &mut Criterion) {
    let mut g = c.benchmark_group("operators");
    for n in [64, 256] {
        let m = log_model(n, 0.1);
        let phi = test_function(&m);
        let k = HeatKernel::new(m.tau, m.grid).unwrap();
        g.bench_with_input(BenchmarkId::new("smooth_1d", n), &phi, |b, f| b.iter(|| k.smooth(black_box(f))));
        g.bench_with_input(BenchmarkId::new("lax_1d", n), &phi, |b, f| b.iter(|| lax(&m, black_box(f)).unwrap()));
        let v = lax(&m, &phi).unwrap().v;
        let dens = GridFunction::constant(m.grid, 1.0);
        g.bench_with_input(BenchmarkId::new("push_smooth_1d", n), &dens, |b, d| {
            b.iter(|| push_smooth(&m, &v, black_box(d)).unwrap())
        });
    }
    let m = planar_model(32, 0.1);
    let phi = test_function(&m);
    g.bench_function("lax_2d/32", |b| b.iter(|| lax(&m, black_box(&phi)).unwrap()));
    g.finish();
}

fn solvers(c: &mut Criterion) {
    let mut g = c.benchmark_group("solvers");
    g.sample_size(10);
    let m = log_model(256, 0.1);
    let src = test_function(&m);
    let z = GridFunction::zeros(m.grid);
    g.bench_function("solve_hj_1d/256", |b| b.iter(|| solve_hj(&m, black_box(&src), &z).unwrap()));
    g.bench_function("solve_mfg_1d/256", |b| b.iter(|| solve_mfg(black_box(&m)).unwrap()));
    g.finish();
}

criterion_group!(benches, operators, solvers);
criterion_main!(benches);
