use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hawkesnet::{
    build_design, select_all, simulate, FitOptions, GroupSolver, Preset, SelectOptions,
};
use hawkesnet_bench::{cubic, design, events, model};

fn bench_simulate(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate");
    for horizon in [10.0, 40.0] {
        let m = model(Preset::Setting1_2, horizon);
        group.bench_with_input(BenchmarkId::from_parameter(horizon), &m, |b, m| {
            b.iter(|| simulate(black_box(m), 7).unwrap())
        });
    }
    group.finish();
}

fn bench_design(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_design");
    group.sample_size(20);
    let ev = events(Preset::Setting1_2, 10.0);
    group.bench_function("exact", |b| {
        b.iter(|| build_design(black_box(&ev), &cubic(4, 4)).unwrap())
    });
    let grid = cubic(4, 4).with_grid_dt(Some(1e-3));
    group.bench_function("grid_1e-3", |b| {
        b.iter(|| build_design(black_box(&ev), &grid).unwrap())
    });
    group.finish();
}

fn bench_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    let ev = events(Preset::Setting1_2, 10.0);
    let d = design(&ev, 4, 4);
    let solver = GroupSolver::new(&d);
    let eta = solver.eta_max(0) * 0.05;
    group.bench_function("fit_node", |b| {
        b.iter(|| {
            solver
                .fit_node(0, black_box(eta), &FitOptions::default())
                .unwrap()
        })
    });
    group.sample_size(10);
    group.bench_function("select_all", |b| {
        b.iter(|| select_all(black_box(&d), &SelectOptions::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_simulate, bench_design, bench_fit);
criterion_main!(benches);
