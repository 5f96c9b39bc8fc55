//! Covariance neural networks (VNNs) for brain-age-gap estimation from
//! regional cortical thickness.
//!
//! The crate covers the whole path from a cohort table to interpretable
//! Δ-Age reports:
//!
//! - [`linalg`]: dense symmetric eigendecomposition, covariance, least squares
//! - [`vnn`]: covariance filters, filter-bank layers and the model
//! - [`training`]: backpropagation, Adam, splits, model selection, ensembles
//! - [`pipeline`]: bias-corrected Δ-Age, regional and eigenvector statistics
//! - [`stats`]: two-group ANOVA and F tail probabilities
//! - [`synth`]: seeded synthetic cohorts with known ground truth
//! - [`io`]: cohort CSV, model JSON, report export

pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod training;
pub mod vnn;

pub use io::{Cohort, Sex, Subject};
pub use linalg::{EigenDecomposition, Matrix};
pub use pipeline::{
    run_pipeline, BiasCorrector, DeltaAgeReport, ExplainabilityReport, PipelineConfig, PipelineOutput,
    RegionTable, ResidualSign,
};
pub use stats::FTestResult;
pub use synth::{default_acceptance_config, generate_cohort, GroundTruth, SynthConfig};
pub use training::{train, train_ensemble, SplitSpec, TrainConfig, TrainReport};
pub use vnn::{default_architecture, Activation, ForwardOutput, LayerConfig, TapTensor, VnnModel};
