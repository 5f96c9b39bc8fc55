//! Seeded synthetic cortical-thickness cohorts with known ground truth.
//!
//! Thickness of region `i` for a subject of age `t`:
//!
//! ```text
//! baseline_i − slope_i·(t − age_min)·(1 + (a − 1)·[disease ∧ i ∈ D]) + Σ_f L_if·z_f + ε_i
//! ```
//!
//! with `z_f ~ N(0, 1)` shared across regions, `ε_i ~ N(0, noise²)`, and the
//! result clamped to [`MIN_THICKNESS`].
//!
//! Random streams (see [`crate::rng`]): the loading matrix `L` is drawn
//! row-major from stream 1 as `N(0, 1)·loading_scale`; subjects are drawn from
//! stream 2 in file order (controls first), each consuming age, sex, the
//! latent factors and then the per-region noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, canonical_region_labels, Cohort, IoError, Sex, Subject};
use crate::rng::{derive_seed, RNG_ALGORITHM};

/// Floor applied to generated thickness (mm).
pub const MIN_THICKNESS: f64 = 0.05;

const LOADING_STREAM: u64 = 1;
const SUBJECT_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub region_labels: Vec<String>,
    pub n_hc: usize,
    pub n_disease: usize,
    pub age_min: f64,
    pub age_max: f64,
    /// Thickness at `age_min` per region (mm).
    pub baseline: Vec<f64>,
    /// Thinning per year per region (mm/year).
    pub aging_slope: Vec<f64>,
    pub disease_regions: Vec<usize>,
    /// Multiplier on the aging slope within `disease_regions` for disease subjects.
    pub acceleration: f64,
    pub n_latent: usize,
    pub loading_scale: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub hc_group: String,
    pub disease_group: String,
    /// Must equal [`RNG_ALGORITHM`].
    pub rng: String,
}

impl SynthConfig {
    pub fn num_regions(&self) -> usize {
        self.region_labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_regions();
        let bad = |msg: String| Err(SynthError::InvalidConfig(msg));
        if m == 0 {
            return bad("no regions".into());
        }
        if self.baseline.len() != m || self.aging_slope.len() != m {
            return bad(format!(
                "{m} regions but {} baselines and {} slopes",
                self.baseline.len(),
                self.aging_slope.len()
            ));
        }
        if !(self.age_min.is_finite() && self.age_max.is_finite() && self.age_min > 0.0 && self.age_min <= self.age_max) {
            return bad(format!("age range ({}, {})", self.age_min, self.age_max));
        }
        if let Some(&d) = self.disease_regions.iter().find(|&&d| d >= m) {
            return bad(format!("disease region {d} out of range for {m} regions"));
        }
        if !(self.acceleration.is_finite() && self.acceleration >= 1.0) {
            return bad(format!("acceleration {} must be at least 1", self.acceleration));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise_std {}", self.noise_std));
        }
        if !(self.loading_scale.is_finite() && self.loading_scale >= 0.0) {
            return bad(format!("loading_scale {}", self.loading_scale));
        }
        if self.baseline.iter().chain(&self.aging_slope).any(|v| !v.is_finite()) {
            return bad("non-finite baseline or slope".into());
        }
        if self.hc_group.is_empty() || self.disease_group.is_empty() || self.hc_group == self.disease_group {
            return bad("group labels must be non-empty and distinct".into());
        }
        if self.rng != RNG_ALGORITHM {
            return bad(format!("unsupported rng `{}` (expected `{RNG_ALGORITHM}`)", self.rng));
        }
        Ok(())
    }
}

/// 68 Desikan-Killiany regions, 400 controls and 150 disease subjects aged
/// 55–85, doubled thinning in 8 medial/lateral temporal regions, 5 latent
/// factors and 0.1 mm noise.
pub fn default_acceptance_config() -> SynthConfig {
    let labels = canonical_region_labels();
    let per_hemi = io::DK_LABELS.len();
    let baseline = (0..labels.len())
        .map(|i| {
            let j = i % per_hemi;
            2.1 + 0.9 * ((j * 13) % per_hemi) as f64 / (per_hemi - 1) as f64
        })
        .collect();
    let aging_slope = (0..labels.len())
        .map(|i| {
            let j = i % per_hemi;
            0.006 + 0.008 * ((j * 7) % per_hemi) as f64 / (per_hemi - 1) as f64
        })
        .collect();
    let disease_regions = ["entorhinal", "parahippocampal", "inferiortemporal", "middletemporal"]
        .iter()
        .flat_map(|name| ["lh", "rh"].map(|h| io::region_index(&format!("{h}_{name}")).unwrap()))
        .collect();
    SynthConfig {
        region_labels: labels,
        n_hc: 400,
        n_disease: 150,
        age_min: 55.0,
        age_max: 85.0,
        baseline,
        aging_slope,
        disease_regions,
        acceleration: 2.0,
        n_latent: 5,
        loading_scale: 0.05,
        noise_std: 0.1,
        seed: 20_240_917,
        hc_group: "HC".into(),
        disease_group: "AD".into(),
        rng: RNG_ALGORITHM.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub disease_regions: Vec<usize>,
    pub disease_region_labels: Vec<String>,
    /// True group per subject, in cohort order.
    pub subject_groups: Vec<(String, String)>,
    /// Region × factor loadings.
    pub loadings: Vec<Vec<f64>>,
    pub config: SynthConfig,
}

fn draw_loadings(config: &SynthConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, LOADING_STREAM));
    (0..config.num_regions())
        .map(|_| {
            (0..config.n_latent)
                .map(|_| config.loading_scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

pub fn generate_cohort(config: &SynthConfig) -> Result<(Cohort, GroundTruth)> {
    config.validate()?;
    let m = config.num_regions();
    let loadings = draw_loadings(config);
    let in_d: Vec<bool> = (0..m).map(|i| config.disease_regions.contains(&i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SUBJECT_STREAM));

    let total = config.n_hc + config.n_disease;
    let mut subjects = Vec::with_capacity(total);
    for k in 0..total {
        let disease = k >= config.n_hc;
        let age = if config.age_max > config.age_min {
            rng.random_range(config.age_min..config.age_max)
        } else {
            config.age_min
        };
        let sex = if rng.random::<bool>() { Sex::F } else { Sex::M };
        let z: Vec<f64> = (0..config.n_latent).map(|_| rng.sample(StandardNormal)).collect();
        let years = age - config.age_min;
        let features = (0..m)
            .map(|i| {
                let accel = if disease && in_d[i] { config.acceleration } else { 1.0 };
                let latent: f64 = loadings[i].iter().zip(&z).map(|(l, z)| l * z).sum();
                let eps: f64 = rng.sample::<f64, _>(StandardNormal) * config.noise_std;
                let v = config.baseline[i] - config.aging_slope[i] * years * accel + latent + eps;
                v.max(MIN_THICKNESS)
            })
            .collect();
        let (group, id) = if disease {
            (&config.disease_group, format!("{}{:04}", config.disease_group, k - config.n_hc + 1))
        } else {
            (&config.hc_group, format!("{}{:04}", config.hc_group, k + 1))
        };
        subjects.push(Subject {
            subject_id: id,
            age,
            sex,
            group: group.clone(),
            features,
        });
    }
    let cohort = Cohort::new(config.region_labels.clone(), subjects)?;
    let truth = GroundTruth {
        disease_regions: config.disease_regions.clone(),
        disease_region_labels: config
            .disease_regions
            .iter()
            .map(|&i| config.region_labels[i].clone())
            .collect(),
        subject_groups: cohort
            .subjects()
            .iter()
            .map(|s| (s.subject_id.clone(), s.group.clone()))
            .collect(),
        loadings,
        config: config.clone(),
    };
    Ok((cohort, truth))
}
