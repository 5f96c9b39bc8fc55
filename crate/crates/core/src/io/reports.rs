use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{file_err, IoError, Result};
use crate::pipeline::{PipelineOutput, RegionTable};

/// Header of the region map CSV.
pub const REGION_CSV_HEADER: &str = "region_label,f_value,p_raw,p_adjusted,direction,significant";

fn fixed6(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

/// Region table as CSV with six-decimal fixed formatting.
pub fn region_table_csv(table: &RegionTable) -> String {
    let mut out = String::from(REGION_CSV_HEADER);
    out.push('\n');
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.region_label,
            fixed6(r.f_value),
            fixed6(r.p_raw),
            fixed6(r.p_adjusted),
            r.direction,
            r.significant
        );
    }
    out
}

pub fn write_text_file(text: &str, path: &Path) -> Result<()> {
    fs::write(path, text).map_err(file_err(path))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(IoError::Json)?;
    text.push('\n');
    write_text_file(&text, path)
}

pub fn export_region_map(table: &RegionTable, path: &Path) -> Result<()> {
    write_text_file(&region_table_csv(table), path)
}

/// Writes `delta_age.json`, `regions.csv`, `regions.json` and
/// `explainability.json` into `dir`, creating it if needed.
pub fn export_reports(output: &PipelineOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    write_json(&output.delta_age, &dir.join("delta_age.json"))?;
    export_region_map(&output.regions, &dir.join("regions.csv"))?;
    write_json(&output.regions, &dir.join("regions.json"))?;
    write_json(&output.explainability, &dir.join("explainability.json"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::RegionRow;

    fn row(label: &str, f: f64, significant: bool) -> RegionRow {
        RegionRow {
            region_label: label.into(),
            f_value: f,
            p_raw: 1e-6,
            p_adjusted: 6.8e-5,
            disease_mean: 2.0,
            hc_mean: 1.0,
            direction: true,
            significant,
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = RegionTable { alpha: 0.05, n_tests: 0, rows: vec![] };
        assert_eq!(region_table_csv(&t), format!("{REGION_CSV_HEADER}\n"));
    }

    #[test]
    fn rows_use_fixed_precision() {
        let t = RegionTable {
            alpha: 0.05,
            n_tests: 2,
            rows: vec![row("lh_cuneus", 31.25, true), row("rh_insula", f64::INFINITY, false)],
        };
        let csv = region_table_csv(&t);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "lh_cuneus,31.250000,0.000001,0.000068,true,true");
        assert_eq!(lines[2], "rh_insula,inf,0.000001,0.000068,true,false");
        assert_eq!(csv.lines().filter(|l| l.ends_with(",true")).count(), 1);
    }

    #[test]
    fn re_export_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let t = RegionTable { alpha: 0.05, n_tests: 1, rows: vec![row("lh_cuneus", 2.0 / 3.0, false)] };
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        export_region_map(&t, &a).unwrap();
        export_region_map(&t, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let json = dir.path().join("t.json");
        write_json(&t, &json).unwrap();
        let back: RegionTable = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let t = RegionTable { alpha: 0.05, n_tests: 0, rows: vec![] };
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("missing").join("x.csv");
        assert!(matches!(export_region_map(&t, &bad), Err(IoError::File { .. })));
    }
}
