//! Simulation studies written as report tables.

use std::path::{Path, PathBuf};

use foldfit::{run_replications, ConstraintSpec, ReplicationReport, ReplicationSettings, SimDesign};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::output::{format_float, with_suffix, write_file, SCHEMA_VERSION};

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub design: SimDesign,
    pub replicates: usize,
    pub settings: ReplicationSettings,
    /// Output prefix; files are `<out>.report.csv`, `<out>.report.json` and
    /// `<out>.pvalues.csv`.
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    schema_version: u32,
    constraint: &'a ConstraintSpec<f64>,
    report: &'a ReplicationReport,
}

fn csv_bytes(rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let err = |message: String| CliError::Write { path: PathBuf::from("<report.csv>"), message };
    for row in rows {
        writer.write_record(&row).map_err(|e| err(e.to_string()))?;
    }
    writer.into_inner().map_err(|e| err(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

/// One row per requested test: distribution, J, n, hypothesis and rate.
pub fn report_csv(report: &ReplicationReport) -> Result<Vec<u8>> {
    let d = &report.design;
    let mut rows = vec![[
        "distribution", "J", "n", "hypothesis", "test", "replicates", "completed", "failures", "rejections", "rate",
        "alpha", "seed",
    ]
    .map(String::from)
    .to_vec()];
    for (test, summary) in [("score", report.score), ("wald", report.wald)] {
        let Some(s) = summary else { continue };
        rows.push(vec![
            d.distribution.label().into(),
            d.n_categories.to_string(),
            d.n.to_string(),
            d.hypothesis.label().into(),
            test.into(),
            report.replicates.to_string(),
            s.completed.to_string(),
            s.failures.to_string(),
            s.rejections.to_string(),
            if s.rate.is_finite() { format_float(s.rate) } else { String::new() },
            format_float(report.alpha),
            d.seed.to_string(),
        ]);
    }
    csv_bytes(rows)
}

pub fn pvalues_csv(report: &ReplicationReport) -> Result<Vec<u8>> {
    let mut rows = vec![["replicate", "score_p_value", "wald_p_value", "redraws", "error"].map(String::from).to_vec()];
    for o in &report.outcomes {
        rows.push(vec![
            o.replicate.to_string(),
            opt(o.score_p_value),
            opt(o.wald_p_value),
            o.redraws.to_string(),
            o.error.clone().unwrap_or_default(),
        ]);
    }
    csv_bytes(rows)
}

pub fn write_report(out: &Path, report: &ReplicationReport, settings: &ReplicationSettings) -> Result<()> {
    let json_path = with_suffix(out, ".report.json");
    let doc = ReportDocument {
        schema_version: SCHEMA_VERSION,
        constraint: &settings.constraint,
        report,
    };
    let mut json = serde_json::to_vec_pretty(&doc).map_err(|e| CliError::Write { path: json_path.clone(), message: e.to_string() })?;
    json.push(b'\n');
    write_file(&with_suffix(out, ".report.csv"), &report_csv(report)?)?;
    write_file(&with_suffix(out, ".pvalues.csv"), &pvalues_csv(report)?)?;
    write_file(&json_path, &json)
}

pub fn run_simulation(config: &SimulationConfig) -> Result<ReplicationReport> {
    let report = run_replications(&config.design, config.replicates, &config.settings)?;
    write_report(&config.out, &report, &config.settings)?;
    Ok(report)
}
