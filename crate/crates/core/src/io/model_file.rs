use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{file_err, IoError, Result};
use crate::linalg::Matrix;
use crate::vnn::{self, LayerConfig, LayerTaps, TapTensor, TrainingMetadata, VnnModel};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk JSON layout of a [`VnnModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub region_labels: Vec<String>,
    pub layers: Vec<LayerConfig>,
    pub parameter_count: usize,
    /// `[layer][f_out][f_in][k]`.
    pub taps: Vec<Vec<Vec<Vec<f64>>>>,
    /// Normalized covariance, m × m.
    pub covariance: Vec<Vec<f64>>,
    pub lambda_max: f64,
    pub training: TrainingMetadata,
}

impl From<&VnnModel> for ModelFile {
    fn from(model: &VnnModel) -> Self {
        ModelFile {
            version: MODEL_FORMAT_VERSION,
            region_labels: model.region_labels().to_vec(),
            layers: model.layers().to_vec(),
            parameter_count: model.parameter_count(),
            taps: model.taps().layers.iter().map(LayerTaps::to_nested).collect(),
            covariance: model.covariance().to_rows(),
            lambda_max: model.lambda_max(),
            training: model.metadata.clone(),
        }
    }
}

impl TryFrom<ModelFile> for VnnModel {
    type Error = IoError;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.version != MODEL_FORMAT_VERSION {
            return Err(IoError::Version {
                found: file.version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let expected = vnn::parameter_count(&file.layers);
        if file.parameter_count != expected {
            return Err(IoError::Inconsistent(format!(
                "parameter_count is {} but the layers hold {expected}",
                file.parameter_count
            )));
        }
        let layers = file
            .taps
            .iter()
            .map(|l| LayerTaps::from_nested(l))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let taps = TapTensor { layers };
        if !taps.matches(&file.layers) {
            return Err(IoError::Inconsistent("tap tensor shape does not match layers".into()));
        }
        let covariance = Matrix::from_rows(&file.covariance)
            .map_err(|e| IoError::Inconsistent(format!("covariance: {e}")))?;
        let mut model = VnnModel::from_parts(
            file.layers,
            taps,
            covariance,
            file.lambda_max,
            file.region_labels,
        )?;
        model.metadata = file.training;
        Ok(model)
    }
}

pub fn model_to_json(model: &VnnModel) -> String {
    let mut s = serde_json::to_string(&ModelFile::from(model)).expect("model file serializes");
    s.push('\n');
    s
}

pub fn model_from_json(text: &str) -> Result<VnnModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    VnnModel::try_from(file)
}

pub fn save_model(model: &VnnModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_json(model)).map_err(file_err(path))
}

pub fn load_model(path: &Path) -> Result<VnnModel> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vnn::{init_parameters, default_architecture};

    fn model(m: usize) -> VnnModel {
        let arch = default_architecture();
        let mut c = Matrix::identity(m);
        for i in 0..m - 1 {
            c[(i, i + 1)] = 0.3;
            c[(i + 1, i)] = 0.3;
        }
        let labels = crate::io::canonical_region_labels()[..m].to_vec();
        let mut model = VnnModel::new(arch.clone(), init_parameters(&arch, 5), &c, labels).unwrap();
        model.metadata = TrainingMetadata {
            seed: 5,
            epochs_run: 12,
            best_val_mae: Some(6.123456789),
        };
        model
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = model(68);
        let text = model_to_json(&model);
        let back = model_from_json(&text).unwrap();
        assert_eq!(back, model);
        let x: Vec<f64> = (0..68).map(|i| 2.0 + (i as f64 * 0.37).sin()).collect();
        let a = model.forward(&x).unwrap();
        let b = back.forward(&x).unwrap();
        assert_eq!(a.age_estimate.to_bits(), b.age_estimate.to_bits());
        assert_eq!(a.regional_outputs, b.regional_outputs);
        let file: ModelFile = serde_json::from_str(&text).unwrap();
        assert_eq!(file.parameter_count, 22_570);
        assert_eq!(model_to_json(&back), text);
    }

    #[test]
    fn rejects_bad_documents() {
        let text = model_to_json(&model(6));
        let truncated = &text[..text.len() / 2];
        assert!(matches!(model_from_json(truncated), Err(IoError::Json(_))));

        let mut file: ModelFile = serde_json::from_str(&text).unwrap();
        file.version = 99;
        assert!(matches!(
            model_from_json(&serde_json::to_string(&file).unwrap()),
            Err(IoError::Version { found: 99, .. })
        ));

        let mut file: ModelFile = serde_json::from_str(&text).unwrap();
        file.parameter_count = 1;
        assert!(matches!(
            model_from_json(&serde_json::to_string(&file).unwrap()),
            Err(IoError::Inconsistent(_))
        ));

        let mut file: ModelFile = serde_json::from_str(&text).unwrap();
        file.region_labels.pop();
        assert!(model_from_json(&serde_json::to_string(&file).unwrap()).is_err());

        let mut file: ModelFile = serde_json::from_str(&text).unwrap();
        file.taps[1][0].pop();
        assert!(model_from_json(&serde_json::to_string(&file).unwrap()).is_err());
    }
}
