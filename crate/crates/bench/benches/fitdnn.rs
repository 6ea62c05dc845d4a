use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fitdnn_core::*;

fn standard_config(n: usize, d: usize) -> (FitDnnConfig, WeightSet, Vec<f64>) {
    let delays = choose_delays(n, d, DelayStrategy::UniformNoReplacement, 1).unwrap();
    let config = FitDnnConfig {
        alpha: 1.0,
        theta: 0.5,
        nodes_per_layer: n,
        hidden_layers: 2,
        input_dim: 784,
        output_dim: 10,
        delays,
        activation: Activation::Sin,
        preprocessing: Preprocessing::Tanh,
        output_activation: OutputActivation::Softmax,
        x0: 0.0,
        theta_mode: ThetaMode::SmallTheta,
    };
    let weights = xavier_init(&config, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input: Vec<f64> = (0..784).map(|_| rng.gen_range(0.0..1.0)).collect();
    (config, weights, input)
}

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_small_theta");
    for n in [50usize, 100, 200] {
        let (config, weights, input) = standard_config(n, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| forward_small_theta(black_box(&weights), black_box(&input), &config))
        });
    }
    group.finish();
}

fn bench_backprop(c: &mut Criterion) {
    let mut group = c.benchmark_group("backprop");
    for n in [50usize, 100, 200] {
        let (config, weights, input) = standard_config(n, n);
        let state = forward_small_theta(&weights, &input, &config).unwrap();
        let target = Target::Class(4);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                backprop(
                    black_box(&state),
                    black_box(&weights),
                    black_box(&input),
                    &target,
                    Loss::CrossEntropy,
                    &config,
                    true,
                )
            })
        });
    }
    group.finish();
}

/// The diagonal representation should keep per-layer cost at O(N*D); the
/// sweep over D at fixed N makes regressions to dense O(N^2) visible.
fn bench_delay_count(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_by_delay_count");
    for d in [5usize, 50, 199] {
        let (config, weights, input) = standard_config(100, d);
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| forward_small_theta(black_box(&weights), black_box(&input), &config))
        });
    }
    group.finish();
}

fn bench_integrator(c: &mut Criterion) {
    let mut group = c.benchmark_group("integrate_dde");
    group.sample_size(20);
    for m in [16usize, 64] {
        let (config, weights, input) = standard_config(50, 50);
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| {
            b.iter(|| integrate_dde(black_box(&weights), black_box(&input), &config, m))
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_forward,
    bench_backprop,
    bench_delay_count,
    bench_integrator
);
criterion_main!(benches);
