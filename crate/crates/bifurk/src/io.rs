//! File formats: lineage CSV ingestion, parameter files, and JSON report
//! serialization.
//!
//! Lineages travel as two-column CSV (`cell_id,value`) because the
//! integer labels already encode the tree topology; `#` lines are
//! comments. Reports are JSON with a `bifurk_schema` version field and
//! floats printed with 17 significant digits so values round-trip
//! exactly.

use crate::bar::{BarError, BarParams, RootDist};
use crate::empirics::Lineage;
use crate::hypotest::{Dof, TestReport};
use crate::inference::FitResult;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: cannot parse {field}")]
    ParseError { line: usize, field: &'static str },
    #[error("duplicate cell id {0}")]
    DuplicateId(u64),
    #[error("non-positive cell id {0}")]
    NonPositiveId(i64),
    #[error("line {line}: value is not finite")]
    NonFiniteValue { line: usize },
    #[error("missing header line `cell_id,value`")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    InvalidParams(#[from] BarError),
}

/// Bookkeeping from an ingestion run: every input row is either a data
/// row or a counted comment/blank line, never silently dropped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub data_rows: usize,
    pub skipped_lines: usize,
}

pub fn read_lineage(path: impl AsRef<Path>) -> Result<Lineage, IoError> {
    let file = File::open(path)?;
    read_lineage_from(BufReader::new(file)).map(|(lineage, _)| lineage)
}

/// Parse a lineage from any reader, reporting ingestion counts.
pub fn read_lineage_from(reader: impl BufRead) -> Result<(Lineage, IngestStats), IoError> {
    let mut lineage = Lineage::new();
    let mut stats = IngestStats::default();
    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            stats.skipped_lines += 1;
            continue;
        }
        if !saw_header {
            let normalized: String = trimmed.split(',').map(str::trim).collect::<Vec<_>>().join(",");
            if normalized != "cell_id,value" {
                return Err(IoError::MissingHeader);
            }
            saw_header = true;
            continue;
        }
        let mut fields = trimmed.split(',');
        let id_text = fields.next().map(str::trim).unwrap_or_default();
        let value_text = fields.next().map(str::trim);
        let (Some(value_text), None) = (value_text, fields.next()) else {
            return Err(IoError::ParseError {
                line: line_no,
                field: "row (expected two comma-separated fields)",
            });
        };
        let id: i64 = id_text.parse().map_err(|_| IoError::ParseError {
            line: line_no,
            field: "cell_id",
        })?;
        if id <= 0 {
            return Err(IoError::NonPositiveId(id));
        }
        let value: f64 = value_text.parse().map_err(|_| IoError::ParseError {
            line: line_no,
            field: "value",
        })?;
        if !value.is_finite() {
            return Err(IoError::NonFiniteValue { line: line_no });
        }
        if lineage.insert(id as u64, value).is_some() {
            return Err(IoError::DuplicateId(id as u64));
        }
        stats.data_rows += 1;
    }
    if !saw_header {
        return Err(IoError::MissingHeader);
    }
    Ok((lineage, stats))
}

pub fn write_lineage(lineage: &Lineage, path: impl AsRef<Path>) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "cell_id,value")?;
    for (id, value) in lineage.iter() {
        // shortest representation that parses back to the same f64
        writeln!(w, "{id},{value}")?;
    }
    Ok(())
}

/// BAR parameters plus a root distribution, as stored in a params file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamsFile {
    pub alpha0: f64,
    pub beta0: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub sigma2: f64,
    pub rho: f64,
    #[serde(default = "default_root")]
    pub root: RootDist,
}

fn default_root() -> RootDist {
    RootDist::Stationary
}

pub fn read_params(path: impl AsRef<Path>) -> Result<(BarParams, RootDist), IoError> {
    let file = File::open(path)?;
    let parsed: ParamsFile = serde_json::from_reader(BufReader::new(file))?;
    parsed.root.validate()?;
    let params = BarParams::new(
        parsed.alpha0,
        parsed.beta0,
        parsed.alpha1,
        parsed.beta1,
        parsed.sigma2,
        parsed.rho,
    )?;
    Ok((params, parsed.root))
}

/// Schema version stamped into every report.
pub const SCHEMA_VERSION: u64 = 1;

/// Serializable mirror of a [`FitResult`] with the report field names.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub theta_hat: [f64; 4],
    pub sigma2_hat: f64,
    pub rho_hat: f64,
    pub gamma_hat: [f64; 2],
    pub mu_hats: [f64; 2],
    pub sigma_prime_hat: [[f64; 4]; 4],
    pub counts: CountsReport,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CountsReport {
    pub n_pairs0: u64,
    pub n_pairs1: u64,
    pub n_triangles: u64,
}

impl From<&FitResult> for FitReport {
    fn from(fit: &FitResult) -> Self {
        let mut sigma_prime = [[0.0; 4]; 4];
        for (i, row) in sigma_prime.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = fit.sigma_prime_hat[(i, j)];
            }
        }
        FitReport {
            theta_hat: fit.theta_hat.as_array(),
            sigma2_hat: fit.sigma2_hat,
            rho_hat: fit.rho_hat,
            gamma_hat: fit.gamma_hat,
            mu_hats: [fit.mu1_hat, fit.mu2_hat],
            sigma_prime_hat: sigma_prime,
            counts: CountsReport {
                n_pairs0: fit.counts.pairs0,
                n_pairs1: fit.counts.pairs1,
                n_triangles: fit.counts.triangles,
            },
        }
    }
}

/// Serializable mirror of a [`TestReport`]; `dof` is an integer for the
/// chi-square tests and the string `"normal"` for the z-test.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestReportJson {
    pub name: String,
    pub statistic: f64,
    pub dof: Value,
    pub p_value: f64,
    pub n_effective: u64,
}

impl From<&TestReport> for TestReportJson {
    fn from(report: &TestReport) -> Self {
        TestReportJson {
            name: report.name.as_str().to_string(),
            statistic: report.statistic,
            dof: match report.dof {
                Dof::ChiSquared(k) => Value::from(k),
                Dof::Normal => Value::from("normal"),
            },
            p_value: report.p_value,
            n_effective: report.n_effective,
        }
    }
}

/// Write any serializable report as JSON, stamping `bifurk_schema` and
/// printing floats with 17 significant digits.
pub fn write_report<T: Serialize>(report: &T, path: impl AsRef<Path>) -> Result<(), IoError> {
    let text = report_to_string(report)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn report_to_string<T: Serialize>(report: &T) -> Result<String, IoError> {
    let mut value = serde_json::to_value(report)?;
    if let Value::Object(map) = &mut value {
        map.entry("bifurk_schema".to_string())
            .or_insert_with(|| Value::from(SCHEMA_VERSION));
    }
    let mut out = String::new();
    write_value(&value, 0, &mut out);
    Ok(out)
}

fn write_value(value: &Value, indent: usize, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(f) = n.as_f64().filter(|_| !n.is_i64() && !n.is_u64()) {
                // 17 significant digits: enough to reproduce any f64 exactly
                out.push_str(&format!("{f:.16e}"));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string encodes")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                push_newline(out, indent + 1);
                write_value(item, indent + 1, out);
            }
            push_newline(out, indent);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            for (i, (key, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                push_newline(out, indent + 1);
                out.push_str(&serde_json::to_string(key).expect("key encodes"));
                out.push_str(": ");
                write_value(item, indent + 1, out);
            }
            push_newline(out, indent);
            out.push('}');
        }
    }
}

fn push_newline(out: &mut String, indent: usize) {
    out.push('\n');
    for _ in 0..indent {
        out.push_str("  ");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference;
    use std::io::Cursor;

    fn parse(text: &str) -> Result<(Lineage, IngestStats), IoError> {
        read_lineage_from(Cursor::new(text.as_bytes()))
    }

    #[test]
    fn reads_a_small_file() {
        let (lineage, stats) = parse("cell_id,value\n1,0.037\n2,0.036\n3,0.035\n").unwrap();
        assert_eq!(lineage.len(), 3);
        assert_eq!(lineage.get(1), Some(0.037));
        assert_eq!(lineage.get(3), Some(0.035));
        assert_eq!(stats.data_rows, 3);
        assert_eq!(stats.skipped_lines, 0);
    }

    #[test]
    fn counts_comments_and_blanks() {
        let (lineage, stats) =
            parse("# film 12\ncell_id,value\n1,1.0\n\n# gap\n2,2.0\n").unwrap();
        assert_eq!(lineage.len(), 2);
        assert_eq!(stats.data_rows, 2);
        assert_eq!(stats.skipped_lines, 3);
    }

    #[test]
    fn rejects_duplicates_and_bad_ids() {
        let err = parse("cell_id,value\n1,1.0\n2,2.0\n2,3.0\n").unwrap_err();
        assert!(matches!(err, IoError::DuplicateId(2)));
        let err = parse("cell_id,value\n0,1.0\n").unwrap_err();
        assert!(matches!(err, IoError::NonPositiveId(0)));
        let err = parse("cell_id,value\n-3,1.0\n").unwrap_err();
        assert!(matches!(err, IoError::NonPositiveId(-3)));
        let err = parse("cell_id,value\n1,nan\n").unwrap_err();
        assert!(matches!(err, IoError::NonFiniteValue { line: 2 }));
        let err = parse("cell_id,value\n1\n").unwrap_err();
        assert!(matches!(err, IoError::ParseError { line: 2, .. }));
        let err = parse("cell_id,value\nx,1.0\n").unwrap_err();
        assert!(matches!(err, IoError::ParseError { line: 2, .. }));
        assert!(matches!(parse("1,2\n"), Err(IoError::MissingHeader)));
    }

    #[test]
    fn lineage_round_trips_through_files() {
        let dir = std::env::temp_dir().join("bifurk-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.csv");
        let mut lineage = Lineage::new();
        lineage.insert(1, 0.1 + 0.2);
        lineage.insert(2, -1.0 / 3.0);
        lineage.insert(7, 1e-300);
        lineage.insert(25, f64::MIN_POSITIVE);
        write_lineage(&lineage, &path).unwrap();
        let back = read_lineage(&path).unwrap();
        assert_eq!(lineage, back);
    }

    #[test]
    fn fit_report_round_trips_with_full_precision() {
        let lin: Lineage = (1u64..=31)
            .map(|n| (n, (n as f64 * 0.613).sin() * 2.0 + 1.0))
            .collect();
        let fit = inference::fit(&lin).unwrap();
        let report = FitReport::from(&fit);
        let text = report_to_string(&report).unwrap();
        let value: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["bifurk_schema"], Value::from(1));
        let back: FitReport = serde_json::from_value(value).unwrap();
        assert_eq!(back.theta_hat, fit.theta_hat.as_array());
        assert_eq!(back.sigma2_hat, fit.sigma2_hat);
        assert_eq!(back.rho_hat, fit.rho_hat);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(back.sigma_prime_hat[i][j], fit.sigma_prime_hat[(i, j)]);
            }
        }
    }

    #[test]
    fn test_report_serializes_both_dof_kinds() {
        use crate::hypotest::{Dof, TestName, TestReport};
        let chi = TestReport {
            name: TestName::EqualAlpha,
            statistic: 1.5,
            dof: Dof::ChiSquared(1),
            p_value: 0.22,
            n_effective: 100,
        };
        let text = report_to_string(&TestReportJson::from(&chi)).unwrap();
        let value: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["dof"], Value::from(1));
        assert_eq!(value["name"], Value::from("equal_alpha"));
        assert!(value["p_value"].is_f64());

        let z = TestReport {
            name: TestName::SisterDifference,
            statistic: -0.5,
            dof: Dof::Normal,
            p_value: 0.05,
            n_effective: 100,
        };
        let text = report_to_string(&TestReportJson::from(&z)).unwrap();
        let value: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["dof"], Value::from("normal"));
        assert_eq!(value["p_value"].as_f64().unwrap(), 0.05);
    }

    #[test]
    fn params_file_round_trip() {
        let dir = std::env::temp_dir().join("bifurk-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("params.json");
        std::fs::write(
            &path,
            r#"{"alpha0": 0.5, "beta0": 1.0, "alpha1": 0.7, "beta1": 0.3,
               "sigma2": 1.0, "rho": 0.4, "root": {"kind": "dirac", "value": 2.0}}"#,
        )
        .unwrap();
        let (params, root) = read_params(&path).unwrap();
        assert_eq!(params.alpha1(), 0.7);
        assert_eq!(root, RootDist::Dirac { value: 2.0 });

        std::fs::write(
            &path,
            r#"{"alpha0": 1.5, "beta0": 1.0, "alpha1": 0.7, "beta1": 0.3,
               "sigma2": 1.0, "rho": 0.4, "root": {"kind": "stationary"}}"#,
        )
        .unwrap();
        assert!(matches!(read_params(&path), Err(IoError::InvalidParams(_))));
    }
}
