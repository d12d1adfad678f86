use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use safeod::linear::{frank_wolfe_safe, g_optimal, FwOptions};
use safeod::numerics::{sample_simplex, seeded_rng};
use safeod::tabular::{safe_design_boxed, water_fill};
use safeod::{Policy, RewardBox};
use safeod_bench::synthetic;

fn tabular(c: &mut Criterion) {
    let mut rng = seeded_rng(1);
    let pi0 = Policy::new(sample_simplex(&mut rng, 50)).unwrap();
    let lower: Vec<f64> = (0..50).map(|i| 0.2 + 0.01 * i as f64).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + 0.3).collect();
    let b = RewardBox::new(lower, upper).unwrap();
    c.bench_function("water_fill K=50", |bch| bch.iter(|| water_fill(black_box(&pi0), 0.8).unwrap()));
    c.bench_function("boxed LP K=50", |bch| bch.iter(|| safe_design_boxed(black_box(&pi0), 0.8, &b).unwrap()));
}

fn linear(c: &mut Criterion) {
    let opts = FwOptions::default();
    let mut group = c.benchmark_group("frank_wolfe");
    group.sample_size(10);
    for d in [2, 4, 8] {
        let prob = synthetic(d, 0.9, 3);
        group.bench_with_input(BenchmarkId::new("safe", d), &prob, |bch, p| {
            bch.iter(|| frank_wolfe_safe(p, &opts).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("g_optimal", d), &prob, |bch, p| {
            bch.iter(|| g_optimal(&p.features, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, tabular, linear);
criterion_main!(benches);
