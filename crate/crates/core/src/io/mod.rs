//! File formats: cohort CSV, model JSON, report JSON/CSV, and the region label table.

mod cohort;
mod labels;
mod model_file;
mod reports;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use cohort::{load_cohort_csv, load_cohort_csv_with_labels, read_cohort_csv, save_cohort_csv, write_cohort_csv, Cohort, Sex, Subject};
pub use labels::{canonical_region_labels, region_index, DK_LABELS, NUM_REGIONS};
pub use model_file::{load_model, model_from_json, model_to_json, save_model, ModelFile, MODEL_FORMAT_VERSION};
pub use reports::{
    export_region_map, export_reports, region_table_csv, write_json, write_text_file,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error("empty file: no header row")]
    EmptyFile,
    #[error("cohort has no subjects")]
    NoSubjects,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unexpected column `{0}`")]
    UnexpectedColumn(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("row {row} (line {line}), column `{column}`: {message}")]
    Value {
        row: usize,
        line: u64,
        column: String,
        message: String,
    },
    #[error("invalid cohort: {0}")]
    InvalidCohort(String),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("inconsistent model file: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Model(#[from] crate::vnn::VnnError),
}

pub type Result<T> = std::result::Result<T, IoError>;

pub(crate) fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Serde adapter writing non-finite floats as the strings "inf", "-inf" or "nan".
pub mod json_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("invalid float `{other}`"))),
            },
        }
    }
}
