//! Supervised age regression: backpropagation through covariance filters,
//! Adam, seeded data splits, best-validation model selection and ensembles.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::Cohort;
use crate::linalg::{self, LinalgError, Matrix};
use crate::rng::derive_seed;
use crate::stats::{self, StatsError};
use crate::vnn::{self, LayerConfig, TapTensor, TrainingMetadata, VnnError, VnnModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("split sizes ({train}, {validation}, {test}) do not fit a cohort of {available}")]
    SplitTooLarge {
        train: usize,
        validation: usize,
        test: usize,
        available: usize,
    },
    #[error("need at least {needed} training subjects, got {got}")]
    TooFewSubjects { needed: usize, got: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Vnn(#[from] VnnError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

const SPLIT_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;
const ENSEMBLE_STREAM: u64 = 4;

/// How a cohort is divided into training, validation and test subjects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Fractions summing to 1. Validation and test sizes are rounded; the
    /// training subset takes the remainder.
    Fractions {
        train: f64,
        validation: f64,
        test: f64,
    },
    Counts {
        train: usize,
        validation: usize,
        test: usize,
    },
}

impl SplitSpec {
    /// 498 / 70 / 63 on a cohort of 631.
    pub const DEFAULT: SplitSpec = SplitSpec::Fractions {
        train: 0.789,
        validation: 0.111,
        test: 0.1,
    };

    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        match *self {
            SplitSpec::Counts {
                train,
                validation,
                test,
            } => {
                if train + validation + test > n {
                    return Err(TrainError::SplitTooLarge {
                        train,
                        validation,
                        test,
                        available: n,
                    });
                }
                Ok((train, validation, test))
            }
            SplitSpec::Fractions {
                train,
                validation,
                test,
            } => {
                let all = [train, validation, test];
                if all.iter().any(|f| !(0.0..=1.0).contains(f)) || (train + validation + test - 1.0).abs() > 1e-9 {
                    return Err(TrainError::InvalidConfig(format!(
                        "split fractions ({train}, {validation}, {test}) must lie in [0, 1] and sum to 1"
                    )));
                }
                let val = (n as f64 * validation).round() as usize;
                let tst = (n as f64 * test).round() as usize;
                if val + tst > n {
                    return Err(TrainError::SplitTooLarge {
                        train: 0,
                        validation: val,
                        test: tst,
                        available: n,
                    });
                }
                Ok((n - val - tst, val, tst))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub split: SplitSpec,
    pub seed: u64,
    pub architecture: Vec<LayerConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.15,
            batch_size: 10,
            max_epochs: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            split: SplitSpec::DEFAULT,
            seed: 0,
            architecture: vnn::default_architecture(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(TrainError::InvalidConfig("adam betas must lie in [0, 1)".into()));
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return Err(TrainError::InvalidConfig("adam_epsilon must be positive".into()));
        }
        vnn::validate_architecture(&self.architecture)?;
        Ok(())
    }
}

/// Disjoint subject indices for each partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Training subset and validation together; the covariance is estimated from these.
    pub fn training_set(&self) -> Vec<usize> {
        self.train.iter().chain(&self.validation).copied().collect()
    }
}

/// Seeded shuffle of the cohort into train / validation / test.
pub fn split_dataset(cohort: &Cohort, split: &SplitSpec, seed: u64) -> Result<Split> {
    let (n_train, n_val, n_test) = split.sizes(cohort.len())?;
    let mut idx: Vec<usize> = (0..cohort.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, SPLIT_STREAM)));
    Ok(Split {
        train: idx[..n_train].to_vec(),
        validation: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..n_train + n_val + n_test].to_vec(),
    })
}

pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(TrainError::LengthMismatch(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(TrainError::Empty);
    }
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / predictions.len() as f64)
}

/// Gradient of one subject's squared error, scaled by `weight`.
fn subject_gradient(model: &VnnModel, x: &[f64], age: f64, weight: f64) -> (TapTensor, f64) {
    let caches = model.forward_cached(x);
    let m = x.len();
    let regional = caches.last().expect("model has layers").out.column(0);
    let estimate = regional.iter().sum::<f64>() / m as f64;
    let residual = estimate - age;

    let c = model.covariance();
    let mut grad = TapTensor::zeros_like(model.taps());
    // d(loss)/d(regional output i) through the mean readout
    let mut upstream = Matrix::column_vector(&vec![weight * 2.0 * residual / m as f64; m]);

    for (l, (cfg, cache)) in model.layers().iter().zip(&caches).enumerate().rev() {
        let mut d_pre = upstream;
        for ((d, &u), &y) in d_pre
            .as_mut_slice()
            .iter_mut()
            .zip(cache.pre.as_slice())
            .zip(cache.out.as_slice())
        {
            *d *= cfg.activation.derivative(u, y);
        }

        // dL/dh_fg[k] = Σ_i (Cᵏ x_in)[i, g] · d_pre[i, f]
        let layer_grad = &mut grad.layers[l];
        for (k, z) in cache.powers.iter().enumerate() {
            let mut acc = Matrix::zeros(cfg.f_in, cfg.f_out);
            for i in 0..m {
                let d_row = d_pre.row(i);
                for (g, &zg) in z.row(i).iter().enumerate() {
                    if zg == 0.0 {
                        continue;
                    }
                    for (a, &d) in acc.row_mut(g).iter_mut().zip(d_row) {
                        *a += zg * d;
                    }
                }
            }
            for f in 0..cfg.f_out {
                for g in 0..cfg.f_in {
                    layer_grad.filter_mut(f, g)[k] = acc[(g, f)];
                }
            }
        }

        if l == 0 {
            break;
        }
        // dL/dx_in = Σ_k Cᵏ (d_pre W_kᵀ), evaluated by Horner's rule (C symmetric)
        let weights = model.taps().layers[l].mixing_matrices();
        let d_powers: Vec<Matrix> = weights
            .iter()
            .map(|w| {
                let mut dz = Matrix::zeros(m, cfg.f_in);
                for i in 0..m {
                    let d_row = d_pre.row(i);
                    for g in 0..cfg.f_in {
                        dz[(i, g)] = linalg::dot(d_row, w.row(g));
                    }
                }
                dz
            })
            .collect();
        let mut acc = d_powers.last().unwrap().clone();
        for dz in d_powers.iter().rev().skip(1) {
            let mut next = dz.clone();
            linalg::matmul_acc(c, &acc, &mut next);
            acc = next;
        }
        upstream = acc;
    }
    (grad, residual * residual)
}

/// Gradient of the batch-mean squared error with respect to every tap,
/// together with that loss.
pub fn backward(model: &VnnModel, batch: &[(&[f64], f64)]) -> Result<(TapTensor, f64)> {
    if batch.is_empty() {
        return Err(TrainError::Empty);
    }
    for (x, _) in batch {
        if x.len() != model.num_regions() {
            return Err(TrainError::Vnn(VnnError::DimensionMismatch(format!(
                "model has {} regions, input has {}",
                model.num_regions(),
                x.len()
            ))));
        }
    }
    let weight = 1.0 / batch.len() as f64;
    let parts: Vec<(TapTensor, f64)> = batch
        .par_iter()
        .map(|(x, age)| subject_gradient(model, x, *age, weight))
        .collect();
    // ordered reduction keeps the result independent of scheduling
    let mut grad = TapTensor::zeros_like(model.taps());
    let mut loss = 0.0;
    for (g, sq) in &parts {
        grad.add_scaled(g, 1.0);
        loss += sq;
    }
    Ok((grad, loss * weight))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: TapTensor,
    pub second_moment: TapTensor,
    pub step: u64,
}

impl AdamState {
    pub fn new(like: &TapTensor) -> Self {
        AdamState {
            first_moment: TapTensor::zeros_like(like),
            second_moment: TapTensor::zeros_like(like),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    taps: &mut TapTensor,
    grads: &TapTensor,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if !taps.same_shape(grads) || !taps.same_shape(&state.first_moment) || !taps.same_shape(&state.second_moment) {
        return Err(TrainError::LengthMismatch(
            "taps, gradients and Adam moments must share one shape".into(),
        ));
    }
    state.step += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let t = state.step as i32;
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    for (((p, &g), m), v) in taps
        .iter_mut()
        .zip(grads.iter())
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p -= lr * m_hat / (v_hat.sqrt() + config.adam_epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub mae: f64,
    /// `None` when predictions or ages have zero variance.
    pub pearson_r: Option<f64>,
}

pub fn evaluate(model: &VnnModel, cohort: &Cohort) -> Result<Evaluation> {
    if cohort.is_empty() {
        return Err(TrainError::Empty);
    }
    let preds = predict(model, cohort)?;
    let ages = cohort.ages();
    let mae = stats::mae(&preds, &ages)?;
    let pearson_r = match stats::pearson(&preds, &ages) {
        Ok(r) => Some(r),
        Err(StatsError::ZeroVariance) | Err(StatsError::GroupTooSmall { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(Evaluation {
        n: cohort.len(),
        mae,
        pearson_r,
    })
}

/// Raw age estimates for every subject, in cohort order.
pub fn predict(model: &VnnModel, cohort: &Cohort) -> Result<Vec<f64>> {
    Ok(model
        .forward_many(&cohort.features())?
        .into_iter()
        .map(|o| o.age_estimate)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub split_sizes: (usize, usize, usize),
    /// Training-subset MSE of the initialized model.
    pub initial_train_loss: f64,
    /// Mean minibatch loss of each completed epoch.
    pub epoch_train_loss: Vec<f64>,
    /// Validation MAE after each epoch; index 0 is the initialized model.
    pub validation_mae: Vec<f64>,
    pub selected_epoch: usize,
    pub epochs_run: usize,
    pub test: Option<Evaluation>,
    pub warnings: Vec<String>,
}

impl TrainReport {
    pub fn best_validation_mae(&self) -> f64 {
        self.validation_mae[self.selected_epoch]
    }
}

/// Trains a model on a cohort of healthy subjects and returns the parameter
/// snapshot with the lowest validation MAE.
pub fn train(cohort: &Cohort, config: &TrainConfig) -> Result<(VnnModel, TrainReport)> {
    config.validate()?;
    let split = split_dataset(cohort, &config.split, config.seed)?;
    if split.train.len() < config.batch_size {
        return Err(TrainError::TooFewSubjects {
            needed: config.batch_size,
            got: split.train.len(),
        });
    }
    if split.validation.is_empty() {
        return Err(TrainError::InvalidConfig("validation split is empty".into()));
    }

    let mut warnings = Vec::new();
    let ages = cohort.ages();
    if ages.iter().all(|a| *a == ages[0]) {
        warnings.push("all ages are equal; the bias corrector will be undefined".to_string());
    }

    let training_set = cohort.subset(&split.training_set());
    let covariance = linalg::sample_covariance(&training_set.feature_matrix()?)?;
    let taps = vnn::init_parameters(&config.architecture, derive_seed(config.seed, INIT_STREAM));
    let mut model = VnnModel::new(
        config.architecture.clone(),
        taps,
        &covariance,
        cohort.region_labels().to_vec(),
    )?;

    let train_set = cohort.subset(&split.train);
    let val_set = cohort.subset(&split.validation);
    let train_x = train_set.features();
    let train_y = train_set.ages();

    let initial_train_loss = mse_loss(&predict(&model, &train_set)?, &train_y)?;
    let mut validation_mae = vec![evaluate(&model, &val_set)?.mae];
    let mut best = (0usize, validation_mae[0], model.taps().clone());
    let mut epoch_train_loss = Vec::with_capacity(config.max_epochs);
    let mut adam = AdamState::new(model.taps());
    let shuffle_base = derive_seed(config.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_x.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(shuffle_base, epoch as u64)));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], f64)> =
                chunk.iter().map(|&i| (train_x[i].as_slice(), train_y[i])).collect();
            let (grad, loss) = backward(&model, &batch)?;
            adam_step(model.taps_mut(), &grad, &mut adam, config)?;
            loss_sum += loss;
            batches += 1;
        }
        let epoch_loss = loss_sum / batches as f64;
        let val_mae = evaluate(&model, &val_set).map(|e| e.mae).unwrap_or(f64::NAN);
        if !epoch_loss.is_finite() || !val_mae.is_finite() {
            warnings.push(format!("training diverged at epoch {epoch}; stopping"));
            break;
        }
        epoch_train_loss.push(epoch_loss);
        validation_mae.push(val_mae);
        if val_mae < best.1 {
            best = (epoch, val_mae, model.taps().clone());
        }
    }

    let epochs_run = epoch_train_loss.len();
    let (selected_epoch, best_val_mae, best_taps) = best;
    let mut model = model.with_taps(best_taps)?;
    model.metadata = TrainingMetadata {
        seed: config.seed,
        epochs_run,
        best_val_mae: Some(best_val_mae),
    };
    let test = if split.test.is_empty() {
        None
    } else {
        Some(evaluate(&model, &cohort.subset(&split.test))?)
    };
    let report = TrainReport {
        seed: config.seed,
        split_sizes: (split.train.len(), split.validation.len(), split.test.len()),
        initial_train_loss,
        epoch_train_loss,
        validation_mae,
        selected_epoch,
        epochs_run,
        test,
        warnings,
    };
    Ok((model, report))
}

/// Seed of ensemble member `index`; member 0 reuses the base seed.
pub fn ensemble_member_seed(base: u64, index: usize) -> u64 {
    if index == 0 {
        base
    } else {
        derive_seed(derive_seed(base, ENSEMBLE_STREAM), index as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<(VnnModel, TrainReport)>,
    /// Mean and sample std of member test MAE, when every member has a test split.
    pub test_mae: Option<(f64, f64)>,
    pub test_pearson: Option<(f64, f64)>,
}

/// Independently trained models, each with its own split, initialization
/// and shuffling derived from the base seed.
pub fn train_ensemble(cohort: &Cohort, config: &TrainConfig, n_models: usize) -> Result<Ensemble> {
    if n_models == 0 {
        return Err(TrainError::InvalidConfig("ensemble needs at least one model".into()));
    }
    let members = (0..n_models)
        .into_par_iter()
        .map(|i| {
            let cfg = TrainConfig {
                seed: ensemble_member_seed(config.seed, i),
                ..config.clone()
            };
            train(cohort, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let maes: Option<Vec<f64>> = members.iter().map(|(_, r)| r.test.map(|t| t.mae)).collect();
    let rs: Option<Vec<f64>> = members
        .iter()
        .map(|(_, r)| r.test.and_then(|t| t.pearson_r))
        .collect();
    Ok(Ensemble {
        test_mae: maes.map(|v| stats::mean_std(&v)),
        test_pearson: rs.map(|v| stats::mean_std(&v)),
        members,
    })
}
