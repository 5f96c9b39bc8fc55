use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use neurovnn::training::{adam_step, backward, AdamState};
use neurovnn::vnn::init_parameters;
use neurovnn::{default_architecture, TrainConfig, VnnModel};
use neurovnn_bench::{control_cohort, control_covariance, region_labels};
use std::hint::black_box;

fn training(c: &mut Criterion) {
    let layers = default_architecture();
    let model = VnnModel::new(
        layers.clone(),
        init_parameters(&layers, 1),
        &control_covariance(),
        region_labels(),
    )
    .unwrap();
    let cohort = control_cohort();
    let features = cohort.features();
    let ages = cohort.ages();
    let batch: Vec<(&[f64], f64)> = features
        .iter()
        .zip(&ages)
        .take(10)
        .map(|(x, &a)| (x.as_slice(), a))
        .collect();

    c.bench_function("backward_batch_10", |b| {
        b.iter(|| backward(black_box(&model), black_box(&batch)).unwrap())
    });

    let config = TrainConfig::default();
    let (grad, _) = backward(&model, &batch).unwrap();
    c.bench_function("adam_step_default_model", |b| {
        b.iter_batched(
            || (model.taps().clone(), AdamState::new(model.taps())),
            |(mut taps, mut state)| adam_step(&mut taps, black_box(&grad), &mut state, &config).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, training);
criterion_main!(benches);
