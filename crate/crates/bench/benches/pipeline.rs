use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use uai_bench::{lenet, relevance_set, sample_image};
use uai_core::attribution::{attribute, AttributionMethod};
use uai_core::net::WeightSet;
use uai_core::posterior::PosteriorSample;
use uai_core::spray;
use uai_core::trainer::cross_entropy_grad;
use uai_core::uai::{group_normalize, uai_percentile, uai_plus};

fn bench_forward_backward(c: &mut Criterion) {
    let net = lenet(false);
    let weights = WeightSet::he_init(&net, 1);
    let image = sample_image();

    c.bench_function("lenet_forward", |b| {
        b.iter(|| net.forward(black_box(&weights), black_box(&image.image), None).unwrap())
    });
    c.bench_function("lenet_grad_weights", |b| {
        b.iter(|| {
            let logits = net.forward(&weights, &image.image, None).unwrap();
            let (_, dl) = cross_entropy_grad(&logits, image.label).unwrap();
            net.grad_weights(&weights, &image.image, &dl, None).unwrap()
        })
    });
}

fn bench_attribution(c: &mut Criterion) {
    let net = lenet(false);
    let weights = WeightSet::he_init(&net, 2);
    let sample = PosteriorSample::deterministic(weights);
    let image = sample_image();

    c.bench_function("lrp_epsilon", |b| {
        b.iter(|| {
            attribute(
                &AttributionMethod::LrpEpsilon { epsilon: 1e-6 },
                &net,
                black_box(&sample),
                &image.image,
                image.label,
            )
            .unwrap()
        })
    });
    c.bench_function("gradient", |b| {
        b.iter(|| {
            attribute(
                &AttributionMethod::Gradient,
                &net,
                black_box(&sample),
                &image.image,
                image.label,
            )
            .unwrap()
        })
    });
}

fn bench_aggregation(c: &mut Criterion) {
    let (_, set) = relevance_set(50);
    c.bench_function("uai_percentile_n50", |b| {
        b.iter(|| uai_percentile(black_box(&set), 95.0).unwrap())
    });
    c.bench_function("uai_plus_n50", |b| {
        let normed = group_normalize(&set).unwrap();
        b.iter(|| uai_plus(black_box(&normed), 0.05).unwrap())
    });
}

fn bench_spray(c: &mut Criterion) {
    let (_, set) = relevance_set(100);
    c.bench_function("spray_cluster_n100", |b| {
        b.iter(|| spray::cluster(black_box(&set), 10, 2, 15, 3).unwrap())
    });
}

criterion_group!(
    benches,
    bench_forward_backward,
    bench_attribution,
    bench_aggregation,
    bench_spray
);
criterion_main!(benches);
