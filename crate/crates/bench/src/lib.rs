//! Shared fixtures for the criterion benchmarks.

use neurovnn::io::{canonical_region_labels, Cohort};
use neurovnn::linalg::{sample_covariance, Matrix};
use neurovnn::synth::{default_acceptance_config, generate_cohort};

/// Control subjects from the default synthetic cohort.
pub fn control_cohort() -> Cohort {
    let (cohort, _) = generate_cohort(&default_acceptance_config()).expect("default config is valid");
    cohort.filter_group("HC")
}

/// Sample covariance of the default control cohort (68 × 68).
pub fn control_covariance() -> Matrix {
    let cohort = control_cohort();
    sample_covariance(&cohort.feature_matrix().expect("finite features")).expect("enough subjects")
}

pub fn region_labels() -> Vec<String> {
    canonical_region_labels()
}
