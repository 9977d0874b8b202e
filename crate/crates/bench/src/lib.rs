//! Criterion benchmarks for the metric and the training loop.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion};
use kspec_core::deep_ssm::{measure_metric, train_epoch_with_metric};
use kspec_core::excitation::gen_multisine;
use kspec_core::kspectral::{channel_metric, k_spectral};
use kspec_core::plants::respond;
use kspec_core::signals::dft_magnitudes;
use kspec_core::{DeepSsm, DeepSsmConfig, NoiseConfig, PlantKind, Signal, TrainConfig, TrainingSet};

/// Unit-norm multisine of length `t` with `t/4` components.
pub fn multisine(t: usize, seed: u64) -> Signal {
    gen_multisine((t / 4).max(1), t, 1.0, seed, false)
        .expect("valid multisine parameters")
        .0
}

/// One Wiener recording of length `t`, cut into windows of `window` samples.
pub fn wiener_set(t: usize, window: usize, seed: u64) -> TrainingSet {
    let u = gen_multisine(t / 2, t, 100.0, seed, false).expect("valid multisine parameters").0;
    let y = respond(PlantKind::Wiener, &u, &NoiseConfig::default_relative(seed)).expect("finite response");
    TrainingSet::from_recording(&u, &y, Some(window)).expect("matching lengths")
}

pub fn bench_spectrum(c: &mut Criterion) {
    let mut g = c.benchmark_group("spectrum");
    for t in [256usize, 2000, 10_000] {
        let u = multisine(t, 1);
        g.bench_with_input(BenchmarkId::new("dft_magnitudes", t), &u, |b, u| {
            b.iter(|| dft_magnitudes(black_box(u)))
        });
        let spec = dft_magnitudes(&u);
        g.bench_with_input(BenchmarkId::new("k_spectral_k4", t), &spec, |b, s| {
            b.iter(|| k_spectral(black_box(s), 4))
        });
        g.bench_with_input(BenchmarkId::new("channel_metric_k4", t), &u, |b, u| {
            b.iter(|| channel_metric(black_box(u.samples()), 4))
        });
    }
    g.finish();
}

pub fn bench_training(c: &mut Criterion) {
    let model = DeepSsm::init(DeepSsmConfig::default(), 3).expect("valid default config");
    let data = wiener_set(1600, 100, 5);
    let cfg = TrainConfig {
        learning_rate: 0.03,
        window: Some(100),
        grad_clip: Some(1.0),
        ..TrainConfig::default()
    };
    let mut g = c.benchmark_group("training");
    g.sample_size(20);
    g.bench_function("measure_metric_1600", |b| {
        b.iter(|| measure_metric(black_box(&model), &data, &cfg, false))
    });
    g.bench_function("epoch_1600_window100", |b| {
        b.iter(|| {
            let mut m = model.clone();
            train_epoch_with_metric(&mut m, &data, &cfg, 1, false)
        })
    });
    g.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    bench_spectrum(c);
    bench_training(c);
}
