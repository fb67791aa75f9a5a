use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ivbb_bench::workload;
use ivbb_core::{grid_search_one_set, pseudo_log_likelihood, BandwidthVector, SearchConfig};

fn config(step: f64) -> SearchConfig {
    SearchConfig {
        lo: BandwidthVector::new(1.0, 1.0, 1.0).unwrap(),
        hi: BandwidthVector::new(3.0, 3.0, 3.0).unwrap(),
        step,
        ..SearchConfig::default()
    }
}

fn lattice_vs_pointwise(c: &mut Criterion) {
    let (train, validation) = workload(20_000, 1_000);
    let cfg = config(0.5);
    let points: Vec<_> = cfg.lattice().unwrap().points().collect();
    let mut group = c.benchmark_group("search/125 points");
    group.sample_size(10);
    group.bench_function("lattice", |b| b.iter(|| grid_search_one_set(black_box(&train), &validation, &cfg).unwrap()));
    group.bench_function("pointwise", |b| {
        b.iter(|| {
            points
                .iter()
                .map(|&bw| pseudo_log_likelihood(&train, &validation, bw, cfg.outlier_drop, cfg.truncation_radius).unwrap())
                .fold(f64::NEG_INFINITY, f64::max)
        })
    });
    group.finish();
}

fn coarse_to_fine(c: &mut Criterion) {
    let (train, validation) = workload(20_000, 1_000);
    let full = config(0.1);
    let staged = SearchConfig { coarse_to_fine: true, ..full.clone() };
    let mut group = c.benchmark_group("search/step 0.1");
    group.sample_size(10);
    group.bench_function("coarse_to_fine", |b| b.iter(|| grid_search_one_set(&train, &validation, &staged).unwrap()));
    group.finish();
}

criterion_group!(benches, lattice_vs_pointwise, coarse_to_fine);
criterion_main!(benches);
