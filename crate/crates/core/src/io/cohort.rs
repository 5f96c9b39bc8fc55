use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{canonical_region_labels, file_err, IoError, Result};
use crate::linalg::Matrix;

const META_COLUMNS: [&str; 4] = ["subject_id", "age", "sex", "group"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
    #[serde(rename = "unknown")]
    Unknown,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::F => "F",
            Sex::M => "M",
            Sex::Unknown => "unknown",
        }
    }

    fn parse(s: &str) -> Option<Sex> {
        match s.trim() {
            "F" | "f" => Some(Sex::F),
            "M" | "m" => Some(Sex::M),
            "" | "unknown" | "U" | "NA" => Some(Sex::Unknown),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub subject_id: String,
    /// Chronological age in years.
    pub age: f64,
    pub sex: Sex,
    pub group: String,
    /// Cortical thickness per region (mm), in the cohort's label order.
    pub features: Vec<f64>,
}

/// Subjects sharing one region schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    region_labels: Vec<String>,
    subjects: Vec<Subject>,
}

impl Cohort {
    pub fn new(region_labels: Vec<String>, subjects: Vec<Subject>) -> Result<Self> {
        if region_labels.is_empty() {
            return Err(IoError::InvalidCohort("no region labels".into()));
        }
        for (i, s) in subjects.iter().enumerate() {
            if s.features.len() != region_labels.len() {
                return Err(IoError::InvalidCohort(format!(
                    "subject {i} ({}) has {} features, expected {}",
                    s.subject_id,
                    s.features.len(),
                    region_labels.len()
                )));
            }
            if !(s.age.is_finite() && s.age > 0.0) {
                return Err(IoError::InvalidCohort(format!(
                    "subject {i} ({}) has invalid age {}",
                    s.subject_id, s.age
                )));
            }
            if let Some(j) = s.features.iter().position(|v| !v.is_finite()) {
                return Err(IoError::InvalidCohort(format!(
                    "subject {i} ({}) has a non-finite value for {}",
                    s.subject_id, region_labels[j]
                )));
            }
        }
        Ok(Cohort {
            region_labels,
            subjects,
        })
    }

    pub fn region_labels(&self) -> &[String] {
        &self.region_labels
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn num_regions(&self) -> usize {
        self.region_labels.len()
    }

    pub fn ages(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.age).collect()
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.subjects.iter().map(|s| s.features.clone()).collect()
    }

    /// Subjects × regions matrix.
    pub fn feature_matrix(&self) -> crate::linalg::Result<Matrix> {
        let data = self.subjects.iter().flat_map(|s| s.features.iter().copied()).collect();
        Matrix::from_row_major(self.len(), self.num_regions(), data)
    }

    /// Subjects at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            region_labels: self.region_labels.clone(),
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }

    pub fn filter_group(&self, group: &str) -> Cohort {
        Cohort {
            region_labels: self.region_labels.clone(),
            subjects: self.subjects.iter().filter(|s| s.group == group).cloned().collect(),
        }
    }

    /// Distinct group labels in first-seen order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.subjects {
            if !out.contains(&s.group) {
                out.push(s.group.clone());
            }
        }
        out
    }
}

/// Loads a cohort whose region columns are the 68 canonical labels.
pub fn load_cohort_csv(path: &Path) -> Result<Cohort> {
    load_cohort_csv_with_labels(path, &canonical_region_labels())
}

pub fn load_cohort_csv_with_labels(path: &Path, labels: &[String]) -> Result<Cohort> {
    let file = File::open(path).map_err(file_err(path))?;
    read_cohort_csv(file, labels)
}

/// Parses cohort CSV. Region columns may appear in any order; features are
/// returned in the order of `labels`.
pub fn read_cohort_csv<R: Read>(reader: R, labels: &[String]) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(IoError::EmptyFile),
        Some(r) => r.map_err(|e| IoError::Csv(e.to_string()))?,
    };
    if header.iter().all(|h| h.trim().is_empty()) {
        return Err(IoError::EmptyFile);
    }

    let mut positions: HashMap<&str, usize> = HashMap::new();
    for (i, name) in header.iter().enumerate() {
        let name = name.trim();
        if positions.insert(name, i).is_some() {
            return Err(IoError::DuplicateColumn(name.to_string()));
        }
    }
    for meta in META_COLUMNS {
        if !positions.contains_key(meta) {
            return Err(IoError::MissingColumn(meta.to_string()));
        }
    }
    for name in header.iter().map(str::trim) {
        if !META_COLUMNS.contains(&name) && !labels.iter().any(|l| l == name) {
            return Err(IoError::UnexpectedColumn(name.to_string()));
        }
    }
    let mut feature_cols = Vec::with_capacity(labels.len());
    for label in labels {
        match positions.get(label.as_str()) {
            Some(&i) => feature_cols.push(i),
            None => return Err(IoError::MissingColumn(label.clone())),
        }
    }
    let col = |name: &str| positions[name];

    let mut subjects = Vec::new();
    for (row, record) in records.enumerate() {
        let record = record.map_err(|e| IoError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        let value_err = |column: &str, message: String| IoError::Value {
            row: row + 1,
            line,
            column: column.to_string(),
            message,
        };
        if record.len() != header.len() {
            return Err(value_err(
                "*",
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let field = |name: &str| record[col(name)].trim();
        let parse_num = |name: &str, raw: &str| -> Result<f64> {
            if raw.is_empty() {
                return Err(value_err(name, "missing value".into()));
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| value_err(name, format!("`{raw}` is not a number")))?;
            if !v.is_finite() {
                return Err(value_err(name, format!("`{raw}` is not finite")));
            }
            Ok(v)
        };

        let subject_id = field("subject_id");
        if subject_id.is_empty() {
            return Err(value_err("subject_id", "missing value".into()));
        }
        let age = parse_num("age", field("age"))?;
        if age <= 0.0 {
            return Err(value_err("age", format!("age must be positive, got {age}")));
        }
        let sex = Sex::parse(field("sex"))
            .ok_or_else(|| value_err("sex", format!("`{}` is not F, M or unknown", field("sex"))))?;
        let group = field("group");
        if group.is_empty() {
            return Err(value_err("group", "missing value".into()));
        }
        let features = labels
            .iter()
            .zip(&feature_cols)
            .map(|(label, &i)| parse_num(label, record[i].trim()))
            .collect::<Result<Vec<f64>>>()?;
        subjects.push(Subject {
            subject_id: subject_id.to_string(),
            age,
            sex,
            group: group.to_string(),
            features,
        });
    }
    if subjects.is_empty() {
        return Err(IoError::NoSubjects);
    }
    Cohort::new(labels.to_vec(), subjects)
}

/// Writes the cohort with shortest round-trip float formatting.
pub fn write_cohort_csv<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| IoError::Csv(e.to_string());
    let header = META_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(cohort.region_labels.iter().cloned());
    wtr.write_record(header).map_err(csv_err)?;
    for s in &cohort.subjects {
        let row = [
            s.subject_id.clone(),
            s.age.to_string(),
            s.sex.as_str().to_string(),
            s.group.clone(),
        ]
        .into_iter()
        .chain(s.features.iter().map(f64::to_string));
        wtr.write_record(row).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| IoError::Csv(e.to_string()))?;
    Ok(())
}

pub fn save_cohort_csv(cohort: &Cohort, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(file_err(path))?;
    write_cohort_csv(cohort, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels3() -> Vec<String> {
        vec!["lh_a".into(), "lh_b".into(), "rh_a".into()]
    }

    #[test]
    fn reads_well_formed_file() {
        let csv = "subject_id,age,sex,group,lh_a,lh_b,rh_a\n\
                   s1,70,F,HC,2.5,2.6,2.7\n\
                   s2,65.5,M,AD,2.1,2.2,2.3\n\
                   s3,80,,HC,2.0,2.0,2.0\n";
        let c = read_cohort_csv(csv.as_bytes(), &labels3()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.subjects()[1].age, 65.5);
        assert_eq!(c.subjects()[2].sex, Sex::Unknown);
        assert_eq!(c.groups(), vec!["HC", "AD"]);
        assert_eq!(c.filter_group("HC").len(), 2);
    }

    #[test]
    fn reorders_permuted_columns() {
        let csv = "group,rh_a,subject_id,lh_b,age,lh_a,sex\nHC,3,s1,2,70,1,F\n";
        let c = read_cohort_csv(csv.as_bytes(), &labels3()).unwrap();
        assert_eq!(c.subjects()[0].features, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn schema_errors_name_the_column() {
        let csv = "subject_id,age,sex,group,lh_a,rh_a\ns1,70,F,HC,1,2\n";
        match read_cohort_csv(csv.as_bytes(), &labels3()) {
            Err(IoError::MissingColumn(c)) => assert_eq!(c, "lh_b"),
            other => panic!("{other:?}"),
        }
        let csv = "subject_id,age,sex,group,lh_a,lh_b,rh_a,extra\ns1,70,F,HC,1,2,3,4\n";
        assert!(matches!(
            read_cohort_csv(csv.as_bytes(), &labels3()),
            Err(IoError::UnexpectedColumn(c)) if c == "extra"
        ));
        assert!(matches!(read_cohort_csv("".as_bytes(), &labels3()), Err(IoError::EmptyFile)));
        let header_only = "subject_id,age,sex,group,lh_a,lh_b,rh_a\n";
        assert!(matches!(read_cohort_csv(header_only.as_bytes(), &labels3()), Err(IoError::NoSubjects)));
    }

    #[test]
    fn value_errors_carry_location() {
        let csv = "subject_id,age,sex,group,lh_a,lh_b,rh_a\ns1,70,F,HC,1,2,3\ns2,71,F,HC,1,,3\n";
        match read_cohort_csv(csv.as_bytes(), &labels3()) {
            Err(IoError::Value { row, line, column, message }) => {
                assert_eq!((row, line, column.as_str()), (2, 3, "lh_b"));
                assert!(message.contains("missing"));
            }
            other => panic!("{other:?}"),
        }
        let csv = "subject_id,age,sex,group,lh_a,lh_b,rh_a\ns1,old,F,HC,1,2,3\n";
        assert!(matches!(
            read_cohort_csv(csv.as_bytes(), &labels3()),
            Err(IoError::Value { column, .. }) if column == "age"
        ));
        let csv = "subject_id,age,sex,group,lh_a,lh_b,rh_a\ns1,70,X,HC,1,2,3\n";
        assert!(matches!(
            read_cohort_csv(csv.as_bytes(), &labels3()),
            Err(IoError::Value { column, .. }) if column == "sex"
        ));
    }

    #[test]
    fn write_then_read_is_identity() {
        let subjects = vec![
            Subject {
                subject_id: "a".into(),
                age: 61.123456789,
                sex: Sex::F,
                group: "HC".into(),
                features: vec![2.0 / 3.0, 1e-7, 3.3],
            },
            Subject {
                subject_id: "b".into(),
                age: 77.0,
                sex: Sex::Unknown,
                group: "FTD".into(),
                features: vec![0.1, 0.2, 0.30000000000000004],
            },
        ];
        let cohort = Cohort::new(labels3(), subjects).unwrap();
        let mut buf = Vec::new();
        write_cohort_csv(&cohort, &mut buf).unwrap();
        assert_eq!(read_cohort_csv(buf.as_slice(), &labels3()).unwrap(), cohort);
    }
}
