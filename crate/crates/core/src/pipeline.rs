//! Brain-age-gap estimation with a trained model: covariance swap to the
//! target cohort's controls, bias-corrected Δ-Age, per-region
//! characterization of the final-layer outputs and eigenvector-level
//! explainability of the regional residuals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::Cohort;
use crate::linalg::{self, EigenDecomposition, LinalgError};
use crate::stats::{self, FTestResult, StatsError};
use crate::vnn::{ForwardOutput, VnnError, VnnModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("region schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("{role} cohort needs at least {needed} subjects, got {got}")]
    CohortTooSmall {
        role: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("chronological ages of the control group are constant; bias correction is undefined")]
    ConstantAges,
    #[error(transparent)]
    Vnn(#[from] VnnError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Sign convention for regional residuals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSign {
    /// `rᵢ = pᵢ − ŷ`: an elevated regional output gives an elevated residual.
    #[default]
    OutputMinusEstimate,
    /// `rᵢ = ŷ − pᵢ`.
    EstimateMinusOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Bonferroni-adjusted threshold for regions.
    pub region_alpha: f64,
    /// Raw p-value threshold for eigenvectors.
    pub eigen_p_threshold: f64,
    pub residual_sign: ResidualSign,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            region_alpha: 0.05,
            eigen_p_threshold: 1e-4,
            residual_sign: ResidualSign::OutputMinusEstimate,
        }
    }
}

/// Linear trend of the raw gap `ŷ − age` on age, fitted on controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCorrector {
    pub slope: f64,
    pub intercept: f64,
}

impl BiasCorrector {
    /// Returns `(brain_age, delta_age)`.
    pub fn apply(&self, age: f64, raw_prediction: f64) -> (f64, f64) {
        let brain_age = raw_prediction - (self.slope * age + self.intercept);
        (brain_age, brain_age - age)
    }
}

pub fn fit_bias_corrector(hc_ages: &[f64], hc_raw_predictions: &[f64]) -> Result<BiasCorrector> {
    if hc_ages.len() != hc_raw_predictions.len() {
        return Err(PipelineError::DimensionMismatch(format!(
            "{} ages for {} predictions",
            hc_ages.len(),
            hc_raw_predictions.len()
        )));
    }
    let gaps: Vec<f64> = hc_raw_predictions.iter().zip(hc_ages).map(|(p, a)| p - a).collect();
    match linalg::least_squares_line(hc_ages, &gaps) {
        Ok((slope, intercept)) => Ok(BiasCorrector { slope, intercept }),
        Err(LinalgError::ConstantRegressor) => Err(PipelineError::ConstantAges),
        Err(LinalgError::TooFewObservations { got, .. }) => Err(PipelineError::CohortTooSmall {
            role: "control",
            needed: 2,
            got,
        }),
        Err(e) => Err(e.into()),
    }
}

pub fn regional_residuals(forward: &ForwardOutput) -> Vec<f64> {
    regional_residuals_with(forward, ResidualSign::OutputMinusEstimate)
}

pub fn regional_residuals_with(forward: &ForwardOutput, sign: ResidualSign) -> Vec<f64> {
    let y = forward.age_estimate;
    forward
        .regional_outputs
        .iter()
        .map(|p| match sign {
            ResidualSign::OutputMinusEstimate => p - y,
            ResidualSign::EstimateMinusOutput => y - p,
        })
        .collect()
}

/// `⟨r, vⱼ⟩` for every eigenvector, in descending-eigenvalue order.
pub fn eigen_projection(residuals: &[f64], eig: &EigenDecomposition) -> Result<Vec<f64>> {
    if residuals.len() != eig.dim() {
        return Err(PipelineError::DimensionMismatch(format!(
            "{} residuals for a {}-dimensional eigenbasis",
            residuals.len(),
            eig.dim()
        )));
    }
    let v = &eig.eigenvectors;
    let mut out = vec![0.0; eig.dim()];
    for (i, r) in residuals.iter().enumerate() {
        for (o, vij) in out.iter_mut().zip(v.row(i)) {
            *o += r * vij;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub region_label: String,
    #[serde(with = "crate::io::json_f64")]
    pub f_value: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub disease_mean: f64,
    pub hc_mean: f64,
    /// Disease mean exceeds control mean.
    pub direction: bool,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTable {
    pub alpha: f64,
    pub n_tests: usize,
    pub rows: Vec<RegionRow>,
}

impl RegionTable {
    pub fn significant_regions(&self) -> Vec<usize> {
        self.rows.iter().enumerate().filter(|(_, r)| r.significant).map(|(i, _)| i).collect()
    }

    /// Region indices ordered by decreasing F (ties by index).
    pub fn ranked_by_f(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.sort_by(|&a, &b| self.rows[b].f_value.total_cmp(&self.rows[a].f_value).then(a.cmp(&b)));
        idx
    }
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

fn check_groups(disease: &[Vec<f64>], hc: &[Vec<f64>], width: usize) -> Result<()> {
    for (role, g) in [("disease", disease), ("control", hc)] {
        if g.len() < 2 {
            return Err(PipelineError::CohortTooSmall {
                role,
                needed: 2,
                got: g.len(),
            });
        }
        if let Some(row) = g.iter().find(|r| r.len() != width) {
            return Err(PipelineError::DimensionMismatch(format!(
                "expected {width} values per subject, got {}",
                row.len()
            )));
        }
    }
    Ok(())
}

/// Per-region two-group ANOVA on final-layer outputs, Bonferroni over all
/// regions; only regions where the disease mean is higher can be significant.
pub fn anatomic_characterization(
    disease_outputs: &[Vec<f64>],
    hc_outputs: &[Vec<f64>],
    region_labels: &[String],
    alpha: f64,
) -> Result<RegionTable> {
    let m = region_labels.len();
    check_groups(disease_outputs, hc_outputs, m)?;
    let rows = (0..m)
        .map(|i| {
            let d = column(disease_outputs, i);
            let h = column(hc_outputs, i);
            let test = stats::anova_f_two_group(&d, &h)?;
            let disease_mean = d.iter().sum::<f64>() / d.len() as f64;
            let hc_mean = h.iter().sum::<f64>() / h.len() as f64;
            let p_adjusted = stats::bonferroni(test.p_raw, m);
            let direction = disease_mean > hc_mean;
            Ok(RegionRow {
                region_label: region_labels[i].clone(),
                f_value: test.f_value,
                p_raw: test.p_raw,
                p_adjusted,
                disease_mean,
                hc_mean,
                direction,
                significant: direction && p_adjusted < alpha,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegionTable {
        alpha,
        n_tests: m,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenRow {
    /// 0 is the eigenvector of the largest eigenvalue.
    pub index: usize,
    pub eigenvalue: f64,
    #[serde(with = "crate::io::json_f64")]
    pub f_value: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub disease_mean: f64,
    pub hc_mean: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProjection {
    pub subject_id: String,
    pub group: String,
    pub projections: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainabilityReport {
    pub p_threshold: f64,
    pub rows: Vec<EigenRow>,
    pub hc_projections: Vec<SubjectProjection>,
    pub disease_projections: Vec<SubjectProjection>,
}

impl ExplainabilityReport {
    pub fn flagged(&self) -> Vec<usize> {
        self.rows.iter().filter(|r| r.significant).map(|r| r.index).collect()
    }
}

/// Per-eigenvector two-group ANOVA on residual projections. Eigenvectors
/// with raw p at or below `p_threshold` are flagged.
pub fn explainability_compare(
    disease_projections: &[Vec<f64>],
    hc_projections: &[Vec<f64>],
    eigenvalues: &[f64],
    p_threshold: f64,
) -> Result<ExplainabilityReport> {
    let m = eigenvalues.len();
    check_groups(disease_projections, hc_projections, m)?;
    let rows = (0..m)
        .map(|j| {
            let d = column(disease_projections, j);
            let h = column(hc_projections, j);
            let test = stats::anova_f_two_group(&d, &h)?;
            Ok(EigenRow {
                index: j,
                eigenvalue: eigenvalues[j],
                f_value: test.f_value,
                p_raw: test.p_raw,
                p_adjusted: stats::bonferroni(test.p_raw, m),
                disease_mean: d.iter().sum::<f64>() / d.len() as f64,
                hc_mean: h.iter().sum::<f64>() / h.len() as f64,
                significant: test.p_raw <= p_threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExplainabilityReport {
        p_threshold,
        rows,
        hc_projections: Vec::new(),
        disease_projections: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Hc,
    Disease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectDelta {
    pub subject_id: String,
    pub group: String,
    pub role: Role,
    pub age: f64,
    pub raw_prediction: f64,
    pub brain_age: f64,
    pub delta_age: f64,
    pub regional_outputs: Vec<f64>,
    pub regional_residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub mean_delta_age: f64,
    pub std_delta_age: f64,
}

impl GroupSummary {
    fn of(deltas: &[f64]) -> Self {
        let (mean_delta_age, std_delta_age) = stats::mean_std(deltas);
        GroupSummary {
            n: deltas.len(),
            mean_delta_age,
            std_delta_age,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaAgeReport {
    pub corrector: BiasCorrector,
    pub residual_sign: ResidualSign,
    /// λ_max of the control covariance swapped into the model.
    pub covariance_lambda_max: f64,
    pub hc: GroupSummary,
    pub disease: GroupSummary,
    /// Disease vs control ANOVA on Δ-Age.
    pub group_test: FTestResult,
    pub subjects: Vec<SubjectDelta>,
}

impl DeltaAgeReport {
    pub fn deltas(&self, role: Role) -> Vec<f64> {
        self.subjects.iter().filter(|s| s.role == role).map(|s| s.delta_age).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub delta_age: DeltaAgeReport,
    pub regions: RegionTable,
    pub explainability: ExplainabilityReport,
    /// Eigendecomposition of the swapped-in (normalized) control covariance.
    pub eigen: EigenDecomposition,
}

fn check_schema(model: &VnnModel, cohort: &Cohort, role: &'static str) -> Result<()> {
    if cohort.region_labels() != model.region_labels() {
        let first = model
            .region_labels()
            .iter()
            .zip(cohort.region_labels())
            .position(|(a, b)| a != b);
        return Err(PipelineError::SchemaMismatch(match first {
            Some(i) => format!(
                "{role} cohort column {i} is `{}`, model expects `{}`",
                cohort.region_labels()[i],
                model.region_labels()[i]
            ),
            None => format!(
                "{role} cohort has {} regions, model has {}",
                cohort.num_regions(),
                model.num_regions()
            ),
        }));
    }
    Ok(())
}

/// Runs the full Δ-Age pipeline on a control cohort and a disease cohort.
pub fn run_pipeline(
    model: &VnnModel,
    hc: &Cohort,
    disease: &Cohort,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    check_schema(model, hc, "control")?;
    check_schema(model, disease, "disease")?;
    if hc.len() < 3 {
        return Err(PipelineError::CohortTooSmall {
            role: "control",
            needed: 3,
            got: hc.len(),
        });
    }
    if disease.len() < 2 {
        return Err(PipelineError::CohortTooSmall {
            role: "disease",
            needed: 2,
            got: disease.len(),
        });
    }

    let hc_cov = linalg::sample_covariance(&hc.feature_matrix()?)?;
    let swapped = model.with_covariance(&hc_cov)?;
    let eigen = linalg::sym_eigendecompose(swapped.covariance())?;

    let hc_fwd = swapped.forward_many(&hc.features())?;
    let dis_fwd = swapped.forward_many(&disease.features())?;

    let hc_raw: Vec<f64> = hc_fwd.iter().map(|o| o.age_estimate).collect();
    let corrector = fit_bias_corrector(&hc.ages(), &hc_raw)?;

    let mut subjects = Vec::with_capacity(hc.len() + disease.len());
    for (role, cohort, fwd) in [(Role::Hc, hc, &hc_fwd), (Role::Disease, disease, &dis_fwd)] {
        for (s, out) in cohort.subjects().iter().zip(fwd.iter()) {
            let (brain_age, delta_age) = corrector.apply(s.age, out.age_estimate);
            subjects.push(SubjectDelta {
                subject_id: s.subject_id.clone(),
                group: s.group.clone(),
                role,
                age: s.age,
                raw_prediction: out.age_estimate,
                brain_age,
                delta_age,
                regional_outputs: out.regional_outputs.clone(),
                regional_residuals: regional_residuals_with(out, config.residual_sign),
            });
        }
    }

    let of_role = |role: Role| subjects.iter().filter(move |s| s.role == role);
    let hc_delta: Vec<f64> = of_role(Role::Hc).map(|s| s.delta_age).collect();
    let dis_delta: Vec<f64> = of_role(Role::Disease).map(|s| s.delta_age).collect();
    let group_test = stats::anova_f_two_group(&dis_delta, &hc_delta)?;

    let hc_outputs: Vec<Vec<f64>> = of_role(Role::Hc).map(|s| s.regional_outputs.clone()).collect();
    let dis_outputs: Vec<Vec<f64>> = of_role(Role::Disease).map(|s| s.regional_outputs.clone()).collect();
    let regions = anatomic_characterization(&dis_outputs, &hc_outputs, model.region_labels(), config.region_alpha)?;

    let project = |role: Role| -> Result<Vec<SubjectProjection>> {
        of_role(role)
            .map(|s| {
                Ok(SubjectProjection {
                    subject_id: s.subject_id.clone(),
                    group: s.group.clone(),
                    projections: eigen_projection(&s.regional_residuals, &eigen)?,
                })
            })
            .collect()
    };
    let hc_proj = project(Role::Hc)?;
    let dis_proj = project(Role::Disease)?;
    let values: Vec<Vec<f64>> = dis_proj.iter().map(|p| p.projections.clone()).collect();
    let hc_values: Vec<Vec<f64>> = hc_proj.iter().map(|p| p.projections.clone()).collect();
    let eigenvalues: Vec<f64> = eigen.eigenvalues.iter().map(|l| l * swapped.lambda_max()).collect();
    let mut explainability = explainability_compare(&values, &hc_values, &eigenvalues, config.eigen_p_threshold)?;
    explainability.hc_projections = hc_proj;
    explainability.disease_projections = dis_proj;

    let delta_age = DeltaAgeReport {
        corrector,
        residual_sign: config.residual_sign,
        covariance_lambda_max: swapped.lambda_max(),
        hc: GroupSummary::of(&hc_delta),
        disease: GroupSummary::of(&dis_delta),
        group_test,
        subjects,
    };
    Ok(PipelineOutput {
        delta_age,
        regions,
        explainability,
        eigen,
    })
}
