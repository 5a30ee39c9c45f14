use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fedhpo_core::analysis::paired_t_test;
use fedhpo_core::data::{generate_synthetic, SyntheticSpec};
use fedhpo_core::gp::{maximize_ucb, GpState, KernelParams};
use fedhpo_core::nn::{client_update, init_params, loss_and_gradient, ModelSpec, TrainConfig};

fn nn(c: &mut Criterion) {
    let data = generate_synthetic(&SyntheticSpec::industrial(9, 0)).unwrap().dataset;
    let spec = ModelSpec::industrial(data.dim(), data.num_classes()).unwrap();
    let w = init_params(&spec, 0);
    let batch = data.subset(&(0..128).collect::<Vec<_>>());
    c.bench_function("gradient industrial b128", |b| {
        b.iter(|| loss_and_gradient(&spec, black_box(&w), &batch, None).unwrap())
    });
    let shard = data.subset(&(0..512).collect::<Vec<_>>());
    let cfg = TrainConfig::new(0.01, 1, 128, 0);
    c.bench_function("client update industrial n512 e1", |b| {
        b.iter(|| client_update(&spec, 0, black_box(&w), &cfg, &shard).unwrap())
    });
}

fn gp(c: &mut Criterion) {
    let mut state = GpState::new(KernelParams::default());
    for i in 0..20 {
        let u = -4.0 + 3.0 * i as f64 / 19.0;
        state.observe(u, (u * 1.3).sin());
    }
    c.bench_function("gp posterior n20", |b| b.iter(|| black_box(&state).fit().unwrap().predict(-2.5)));
    c.bench_function("ucb maximize n20", |b| b.iter(|| maximize_ucb(black_box(&state), -4.0, -1.0, 2.0).unwrap()));
}

fn ttest(c: &mut Criterion) {
    let a: Vec<f64> = (0..9).map(|i| 0.8 + 0.01 * i as f64).collect();
    let b: Vec<f64> = (0..9).map(|i| 0.79 + 0.013 * ((i * 7) % 9) as f64).collect();
    c.bench_function("paired t-test n9", |bch| bch.iter(|| paired_t_test(black_box(&a), black_box(&b)).unwrap()));
}

criterion_group!(benches, nn, gp, ttest);
criterion_main!(benches);
