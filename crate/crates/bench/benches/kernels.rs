use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use shiftcp::calibration::{
    rlscp_predict, splitcp_predict, weighted_quantile, wqlcp_predict, WeightMode, WqlcpConfig,
};
use shiftcp::scores::{score_all_labels, ScoreConfig, ScoreKind};
use shiftcp::seed;
use shiftcp::vae::{sample_gradient, VaeParams};
use shiftcp_bench::{calibration_problem, positive_values, probabilities};

fn quantile(c: &mut Criterion) {
    let mut group = c.benchmark_group("weighted_quantile");
    for n in [100, 1000, 10_000] {
        let scores = positive_values(n, 10);
        let weights = positive_values(n, 11);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| weighted_quantile(black_box(&scores), black_box(&weights), 0.1).unwrap())
        });
    }
    group.finish();
}

fn scores(c: &mut Criterion) {
    let probs = probabilities(1000, 100, 20);
    let mut group = c.benchmark_group("score_all_labels_k100");
    for kind in ScoreKind::ALL {
        let config = ScoreConfig::new(kind);
        group.bench_function(kind.name(), |b| {
            let mut rng = seed::rng(0);
            b.iter(|| {
                for p in &probs {
                    black_box(score_all_labels(p, &config, &mut rng));
                }
            })
        });
    }
    group.finish();
}

fn predict(c: &mut Criterion) {
    let (cal, test) = calibration_problem(1000, 1000, 10);
    let mut group = c.benchmark_group("predict_1000x1000");
    group.sample_size(20);
    group.bench_function("split", |b| {
        b.iter(|| splitcp_predict(&test, &cal, 0.1).unwrap())
    });
    group.bench_function("rlscp", |b| {
        b.iter(|| rlscp_predict(&test, &cal, 0.1).unwrap())
    });
    for mode in [WeightMode::Aggregate, WeightMode::PerSample] {
        let config = WqlcpConfig {
            weight_mode: mode,
            ..WqlcpConfig::default()
        };
        group.bench_function(format!("wqlcp_{mode}"), |b| {
            b.iter(|| wqlcp_predict(&test, &cal, 0.1, &config).unwrap())
        });
    }
    group.finish();
}

fn vae_gradient(c: &mut Criterion) {
    let params = VaeParams::init(8, 32, 4, &mut seed::rng(5));
    let x = positive_values(8, 6);
    let noise = [0.3, -0.2, 0.1, 0.7];
    let mut grad = params.zeros_like();
    c.bench_function("vae_sample_gradient_8_32_4", |b| {
        b.iter(|| sample_gradient(&params, black_box(&x), &noise, 1.2, &mut grad).unwrap())
    });
}

criterion_group!(benches, quantile, scores, predict, vae_gradient);
criterion_main!(benches);
