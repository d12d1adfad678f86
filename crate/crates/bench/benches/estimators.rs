use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use safeod::experiments::reference_instance;
use safeod::numerics::{sample_simplex, seeded_rng};
use safeod::ope::{collect_dataset, ips_value, pi_value, ContextDistribution, ContextualPolicy, RewardModel};
use safeod::safepe::run_safepe;
use safeod::{FeatureMatrix, Policy};

fn random_policy(seed: u64, nx: usize, k: usize) -> ContextualPolicy {
    let mut rng = seeded_rng(seed);
    ContextualPolicy::new((0..nx).map(|_| Policy::new(sample_simplex(&mut rng, k)).unwrap()).collect()).unwrap()
}

fn estimators(c: &mut Criterion) {
    let (nx, k) = (4, 10);
    let mut rng = seeded_rng(2);
    let means = (0..nx).map(|x| (0..k).map(|a| ((x + a) % 7) as f64 / 7.0).collect()).collect();
    let model = RewardModel::tabular(means).unwrap();
    let logging = random_policy(3, nx, k);
    let target = random_policy(4, nx, k);
    let data = collect_dataset(&model, &logging, &ContextDistribution::uniform(nx), 10_000, &mut rng).unwrap();
    let features = FeatureMatrix::identity(k);
    c.bench_function("ips n=1e4", |b| b.iter(|| ips_value(black_box(&data), &target)));
    c.bench_function("pi n=1e4", |b| b.iter(|| pi_value(black_box(&data), &target, &features).unwrap()));
}

fn safepe(c: &mut Criterion) {
    let instance = reference_instance(10).unwrap();
    c.bench_function("safepe K=10 T=1e4", |b| {
        let mut rng = seeded_rng(5);
        b.iter(|| run_safepe(&instance, 10_000, 0.8, 0.1, &mut rng).unwrap())
    });
}

criterion_group!(benches, estimators, safepe);
criterion_main!(benches);
