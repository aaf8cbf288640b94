//! Result files: CSV table, JSON results document and JSON diagnostics.
//!
//! CSV floats use 17 significant digits so every value reads back exactly;
//! missing values are empty cells.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{Analysis, ResultRecord, RunConfig, Summary, TestChoice};
use crate::error::{CliError, Result};
use crate::ingest::DesignSource;

pub const SCHEMA_VERSION: u32 = 1;

pub const RESULT_COLUMNS: [&str; 9] = [
    "category_id",
    "estimate",
    "fold_change",
    "std_error",
    "ci_lo",
    "ci_hi",
    "p_value",
    "q_value",
    "detection_proportion",
];
const WALD_COLUMNS: [&str; 2] = ["wald_p_value", "wald_q_value"];

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

/// `<prefix><suffix>`, keeping any dots already in the prefix.
pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Write { path: path.to_path_buf(), message: e.to_string() })?;
    }
    fs::write(path, contents).map_err(|e| CliError::Write { path: path.to_path_buf(), message: e.to_string() })
}

fn to_json_bytes(value: &impl Serialize, path: &Path) -> Result<Vec<u8>> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| CliError::Write { path: path.to_path_buf(), message: e.to_string() })?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn results_csv(records: &[ResultRecord], with_wald: bool) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = RESULT_COLUMNS.to_vec();
    if with_wald {
        header.extend(WALD_COLUMNS);
    }
    header.push("error");
    let csv_err = |e: csv::Error| CliError::Write { path: PathBuf::from("<results.csv>"), message: e.to_string() };
    writer.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.category_id.clone(),
            format_opt(r.estimate),
            format_opt(r.fold_change),
            format_opt(r.std_error),
            format_opt(r.ci_lo),
            format_opt(r.ci_hi),
            format_opt(r.p_value),
            format_opt(r.q_value),
            format_float(r.detection_proportion),
        ];
        if with_wald {
            row.push(format_opt(r.wald_p_value));
            row.push(format_opt(r.wald_q_value));
        }
        row.push(r.error.clone().unwrap_or_default());
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.into_inner().map_err(|e| CliError::Write { path: PathBuf::from("<results.csv>"), message: e.to_string() })
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let table_err = |message: String| CliError::Table { path: path.to_path_buf(), message };
    let header = reader.headers().map_err(|e| table_err(e.to_string()))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| table_err(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let cell = |name: &str| col(name).and_then(|c| row.get(c)).unwrap_or("");
        let num = |name: &str| -> Result<Option<f64>> {
            let raw = cell(name);
            if raw.is_empty() {
                return Ok(None);
            }
            raw.parse().map(Some).map_err(|_| CliError::Cell {
                path: path.to_path_buf(),
                line,
                column: name.to_string(),
                message: format!("'{raw}' is not a number"),
            })
        };
        let error = cell("error");
        records.push(ResultRecord {
            category_id: cell("category_id").to_string(),
            estimate: num("estimate")?,
            fold_change: num("fold_change")?,
            std_error: num("std_error")?,
            ci_lo: num("ci_lo")?,
            ci_hi: num("ci_hi")?,
            p_value: num("p_value")?,
            q_value: num("q_value")?,
            detection_proportion: num("detection_proportion")?
                .ok_or_else(|| table_err(format!("line {line}: missing detection_proportion")))?,
            wald_p_value: num("wald_p_value")?,
            wald_q_value: num("wald_q_value")?,
            error: (!error.is_empty()).then(|| error.to_string()),
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub counts: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariates: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<PathBuf>,
    pub target: String,
    pub constraint: String,
    pub test: TestChoice,
    pub fdr: f64,
    pub ci_level: f64,
    pub seed: Option<u64>,
}

/// Contents of `<prefix>.results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub schema_version: u32,
    pub run: RunInfo,
    pub summary: Summary,
    pub records: Vec<ResultRecord>,
}

pub fn results_document(config: &RunConfig, analysis: &Analysis) -> ResultsDocument {
    let (covariates, design) = match &config.design {
        DesignSource::Covariates(p) => (Some(p.clone()), None),
        DesignSource::Design(p) => (None, Some(p.clone())),
    };
    ResultsDocument {
        schema_version: SCHEMA_VERSION,
        run: RunInfo {
            counts: config.counts.clone(),
            covariates,
            design,
            target: analysis.target.clone(),
            constraint: analysis.constraint.clone(),
            test: config.settings.test,
            fdr: config.settings.fdr,
            ci_level: config.settings.ci_level,
            seed: config.settings.seed,
        },
        summary: analysis.summary.clone(),
        records: analysis.records.clone(),
    }
}

pub fn diagnostics_document(analysis: &Analysis) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "target": analysis.target,
        "target_index": analysis.target_index,
        "constraint": analysis.constraint,
        "unconstrained_fit": analysis.fit,
        "categories": analysis.categories,
    })
}

pub fn read_results_json(path: &Path) -> Result<ResultsDocument> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| CliError::Table { path: path.to_path_buf(), message: e.to_string() })
}

/// Writes `<prefix>.results.csv`, `<prefix>.results.json` and
/// `<prefix>.diagnostics.json`.
pub fn write_analysis(prefix: &Path, config: &RunConfig, analysis: &Analysis) -> Result<()> {
    let csv_path = with_suffix(prefix, ".results.csv");
    let json_path = with_suffix(prefix, ".results.json");
    let diag_path = with_suffix(prefix, ".diagnostics.json");
    let csv = results_csv(&analysis.records, config.settings.test == TestChoice::Both)?;
    let results = to_json_bytes(&results_document(config, analysis), &json_path)?;
    let diagnostics = to_json_bytes(&diagnostics_document(analysis), &diag_path)?;
    write_file(&csv_path, &csv)?;
    write_file(&json_path, &results)?;
    write_file(&diag_path, &diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, -2.5, 0.0, f64::MIN_POSITIVE, 5e-324] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn suffix_keeps_dots() {
        assert_eq!(with_suffix(Path::new("out/run.v2"), ".results.csv"), PathBuf::from("out/run.v2.results.csv"));
    }
}
