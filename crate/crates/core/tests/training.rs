use neurovnn::io::model_to_json;
use neurovnn::training::{predict, split_dataset};
use neurovnn::*;

fn small_cohort(n_hc: usize, seed: u64) -> Cohort {
    let mut config = default_acceptance_config();
    config.n_hc = n_hc;
    config.n_disease = 0;
    config.seed = seed;
    generate_cohort(&config).unwrap().0
}

fn small_architecture() -> Vec<LayerConfig> {
    vec![
        LayerConfig::new(1, 4, 2, Activation::Relu),
        LayerConfig::new(4, 1, 2, Activation::Identity),
    ]
}

#[test]
fn training_reduces_loss_on_synthetic_controls() {
    let cohort = small_cohort(200, 1);
    let config = TrainConfig {
        max_epochs: 10,
        ..TrainConfig::default()
    };
    let (model, report) = train(&cohort, &config).unwrap();
    assert_eq!(report.split_sizes, (158, 22, 20));
    assert_eq!(report.epoch_train_loss.len(), 10);
    assert!(*report.epoch_train_loss.last().unwrap() < report.initial_train_loss);
    assert_eq!(model.parameter_count(), 22_570);
    assert_eq!(model.metadata.epochs_run, 10);
}

#[test]
fn small_network_halves_its_loss() {
    let cohort = small_cohort(120, 2);
    let config = TrainConfig {
        max_epochs: 50,
        learning_rate: 0.05,
        architecture: small_architecture(),
        ..TrainConfig::default()
    };
    let (_, report) = train(&cohort, &config).unwrap();
    let last = *report.epoch_train_loss.last().unwrap();
    assert!(last < 0.5 * report.initial_train_loss, "{last} vs {}", report.initial_train_loss);
}

#[test]
fn training_is_deterministic() {
    let cohort = small_cohort(80, 3);
    let config = TrainConfig {
        max_epochs: 5,
        seed: 11,
        architecture: small_architecture(),
        ..TrainConfig::default()
    };
    let (a, ra) = train(&cohort, &config).unwrap();
    let (b, rb) = train(&cohort, &config).unwrap();
    assert_eq!(model_to_json(&a), model_to_json(&b));
    assert_eq!(ra, rb);

    let other = TrainConfig { seed: 12, ..config };
    let (c, _) = train(&cohort, &other).unwrap();
    assert_ne!(model_to_json(&a), model_to_json(&c));
}

#[test]
fn covariance_comes_from_training_and_validation_subjects() {
    let cohort = small_cohort(60, 4);
    let config = TrainConfig {
        max_epochs: 0,
        seed: 5,
        architecture: small_architecture(),
        ..TrainConfig::default()
    };
    let (model, _) = train(&cohort, &config).unwrap();
    let split = split_dataset(&cohort, &config.split, config.seed).unwrap();
    let used = cohort.subset(&split.training_set());
    let cov = linalg::sample_covariance(&used.feature_matrix().unwrap()).unwrap();
    let (normalized, lambda_max) = linalg::normalize_covariance(&cov).unwrap();
    assert_eq!(model.lambda_max(), lambda_max);
    assert_eq!(model.covariance(), &normalized);
}

#[test]
fn single_member_ensemble_matches_train() {
    let cohort = small_cohort(60, 5);
    let config = TrainConfig {
        max_epochs: 3,
        seed: 21,
        architecture: small_architecture(),
        ..TrainConfig::default()
    };
    let ensemble = train_ensemble(&cohort, &config, 1).unwrap();
    let (model, report) = train(&cohort, &config).unwrap();
    assert_eq!(ensemble.members.len(), 1);
    assert_eq!(ensemble.members[0].0, model);
    assert_eq!(ensemble.members[0].1, report);
}

#[test]
fn ensemble_members_differ() {
    let cohort = small_cohort(60, 6);
    let config = TrainConfig {
        max_epochs: 2,
        architecture: small_architecture(),
        ..TrainConfig::default()
    };
    let ensemble = train_ensemble(&cohort, &config, 3).unwrap();
    let taps: Vec<&TapTensor> = ensemble.members.iter().map(|(m, _)| m.taps()).collect();
    assert_ne!(taps[0], taps[1]);
    assert_ne!(taps[0], taps[2]);
    assert_ne!(taps[1], taps[2]);
    let (mean, std) = ensemble.test_mae.unwrap();
    assert!(mean > 0.0 && std >= 0.0);

    let predictions: Vec<Vec<f64>> = ensemble
        .members
        .iter()
        .map(|(m, _)| predict(m, &cohort).unwrap())
        .collect();
    assert_ne!(predictions[0], predictions[1]);
}
