//! Per-category testing of one design column.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use foldfit::constrained::AugLagDiagnostics;
use foldfit::inference::{bh_adjust_partial, robust_score_tests_for_row, robust_wald_tests_for_row};
use foldfit::penalized::FitDiagnostics;
use foldfit::{
    fit_unconstrained, wald_confidence_interval, AugLagOptions, ConstraintSpec, CountMatrix, DesignMatrix,
    FitOptions, TestResult,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::ingest::{ingest, DesignSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestChoice {
    Score,
    Wald,
    /// Score p-values in the main columns, Wald p-values alongside.
    Both,
}

impl TestChoice {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Score => "score",
            Self::Wald => "wald",
            Self::Both => "both",
        }
    }
}

impl FromStr for TestChoice {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score" => Ok(Self::Score),
            "wald" => Ok(Self::Wald),
            "both" => Ok(Self::Both),
            other => Err(CliError::Config(format!("unknown test '{other}' (expected score, wald or both)"))),
        }
    }
}

/// Constraint as written on the command line; reference categories are
/// resolved against the count table's ids.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintArg {
    PseudoHuber(f64),
    Reference(String),
}

impl Default for ConstraintArg {
    fn default() -> Self {
        Self::PseudoHuber(foldfit::constraint::DEFAULT_DELTA)
    }
}

impl FromStr for ConstraintArg {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CliError::Config(format!("bad constraint '{s}' (expected pseudo-huber:<delta> or reference:<category_id>)"));
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "pseudo-huber" => {
                let delta: f64 = value.parse().map_err(|_| bad())?;
                if !(delta > 0.0 && delta.is_finite()) {
                    return Err(CliError::Config(format!("pseudo-Huber delta must be positive, got {value}")));
                }
                Ok(Self::PseudoHuber(delta))
            }
            "reference" if !value.is_empty() => Ok(Self::Reference(value.to_string())),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ConstraintArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PseudoHuber(d) => write!(f, "pseudo-huber:{d}"),
            Self::Reference(id) => write!(f, "reference:{id}"),
        }
    }
}

impl ConstraintArg {
    pub fn resolve(&self, category_ids: &[String]) -> Result<ConstraintSpec<f64>> {
        match self {
            Self::PseudoHuber(delta) => Ok(ConstraintSpec::pseudo_huber(*delta)?),
            Self::Reference(id) => category_ids
                .iter()
                .position(|c| c == id)
                .map(|category| ConstraintSpec::Reference { category })
                .ok_or_else(|| CliError::Config(format!("reference category '{id}' not found in counts"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisSettings {
    /// Design column whose coefficients are tested.
    pub target: String,
    pub constraint: ConstraintArg,
    pub test: TestChoice,
    pub fdr: f64,
    pub ci_level: f64,
    /// Recorded in the output; the fit itself is deterministic.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub fit: FitOptions<f64>,
    pub auglag: AugLagOptions<f64>,
}

impl AnalysisSettings {
    pub fn new(target: impl Into<String>) -> Self {
        Self {
            target: target.into(),
            constraint: ConstraintArg::default(),
            test: TestChoice::Score,
            fdr: 0.05,
            ci_level: 0.95,
            seed: None,
            threads: None,
            fit: FitOptions::default(),
            auglag: AugLagOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fdr > 0.0 && self.fdr < 1.0) {
            return Err(CliError::Config(format!("fdr level must be in (0, 1), got {}", self.fdr)));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(CliError::Config(format!("confidence level must be in (0, 1), got {}", self.ci_level)));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("thread count must be at least 1".into()));
        }
        self.fit.validate()?;
        self.auglag.validate()?;
        Ok(())
    }
}

/// Full configuration of a `fit` run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub counts: PathBuf,
    pub design: DesignSource,
    pub out_prefix: PathBuf,
    pub settings: AnalysisSettings,
}

/// One row of the results table. Missing values are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub category_id: String,
    /// Centered log fold-difference.
    pub estimate: Option<f64>,
    pub fold_change: Option<f64>,
    pub std_error: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub p_value: Option<f64>,
    pub q_value: Option<f64>,
    pub detection_proportion: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wald_p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wald_q_value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_samples: usize,
    pub n_categories: usize,
    pub n_tested: usize,
    pub n_failed: usize,
    /// Categories with `q_value < fdr`.
    pub n_significant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub converged: bool,
    pub iterations: usize,
    pub max_abs_change: f64,
    pub j_dagger: usize,
    pub j_dagger_id: String,
    /// Total `h / 2` added to the counts at the final iterate.
    pub total_augmentation: f64,
    pub max_augmentation: f64,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryDiagnostics {
    pub category_id: String,
    pub wald_dropped_directions: Option<usize>,
    pub score_dropped_directions: Option<usize>,
    pub constrained_fit: Option<AugLagDiagnostics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub target: String,
    pub target_index: usize,
    pub constraint: String,
    pub records: Vec<ResultRecord>,
    pub summary: Summary,
    pub fit: FitSummary,
    pub categories: Vec<CategoryDiagnostics>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn target_index(design: &DesignMatrix<f64>, name: &str) -> Result<usize> {
    match design.column_index(name) {
        Some(0) => Err(CliError::Config(format!("target '{name}' is the intercept; choose a covariate column"))),
        Some(k) => Ok(k),
        None => Err(CliError::Config(format!(
            "target '{name}' is not a design column (available: {})",
            design.column_names()[1..].join(", ")
        ))),
    }
}

/// Fits once, tests every category of the target row and adjusts for
/// multiple testing.
pub fn analyze(counts: &CountMatrix<f64>, design: &DesignMatrix<f64>, settings: &AnalysisSettings) -> Result<Analysis> {
    settings.validate()?;
    if counts.n_categories() < 2 {
        return Err(CliError::Config(
            "at least two categories are required; constraints and tests are undefined for a single category".into(),
        ));
    }
    let k = target_index(design, &settings.target)?;
    let constraint = settings.constraint.resolve(counts.category_ids())?;
    match settings.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?
            .install(|| analyze_row(counts, design, settings, &constraint, k)),
        None => analyze_row(counts, design, settings, &constraint, k),
    }
}

fn analyze_row(
    counts: &CountMatrix<f64>,
    design: &DesignMatrix<f64>,
    settings: &AnalysisSettings,
    constraint: &ConstraintSpec<f64>,
    k: usize,
) -> Result<Analysis> {
    let n_cat = counts.n_categories();
    let ids = counts.category_ids();
    let fit = fit_unconstrained(counts, design, constraint, &settings.fit)?;
    if !fit.state.converged {
        log::warn!("unconstrained fit did not converge; results are reported with converged = false");
    }

    let wald = robust_wald_tests_for_row(counts, design, constraint, k, &fit)?;
    let score = match settings.test {
        TestChoice::Score | TestChoice::Both => {
            Some(robust_score_tests_for_row(counts, design, constraint, k, &fit, &settings.auglag))
        }
        TestChoice::Wald => None,
    };

    let detection = counts.detection_proportions();
    let mut records = Vec::with_capacity(n_cat);
    let mut categories = Vec::with_capacity(n_cat);
    let mut wald_p = Vec::with_capacity(n_cat);
    for j in 0..n_cat {
        let estimate = fit.coefficients.beta[(k, j)];
        let mut errors = Vec::new();
        let mut record = ResultRecord {
            category_id: ids[j].clone(),
            estimate: finite(estimate),
            fold_change: finite(estimate.exp()),
            std_error: None,
            ci_lo: None,
            ci_hi: None,
            p_value: None,
            q_value: None,
            detection_proportion: detection[j],
            wald_p_value: None,
            wald_q_value: None,
            error: None,
        };
        let mut diag = CategoryDiagnostics {
            category_id: ids[j].clone(),
            wald_dropped_directions: None,
            score_dropped_directions: None,
            constrained_fit: None,
            error: None,
        };

        let wald_result: Option<&TestResult> = match &wald[j] {
            Ok(result) => Some(result),
            Err(e) => {
                errors.push(format!("wald: {e}"));
                None
            }
        };
        if let Some(result) = wald_result {
            diag.wald_dropped_directions = Some(result.dropped_directions);
            if let Some(se) = result.std_error {
                record.std_error = finite(se);
                if let Ok(ci) = wald_confidence_interval(estimate, se, settings.ci_level) {
                    record.ci_lo = finite(ci.lower);
                    record.ci_hi = finite(ci.upper);
                }
            }
        }
        let wald_p_value = wald_result.map(|r| r.p_value);
        wald_p.push(wald_p_value);

        match &score {
            Some(outcomes) => {
                match &outcomes[j] {
                    Ok(outcome) => {
                        record.p_value = Some(outcome.result.p_value);
                        diag.score_dropped_directions = Some(outcome.result.dropped_directions);
                        diag.constrained_fit = Some(outcome.constrained.clone());
                    }
                    Err(e) => errors.push(format!("score: {e}")),
                }
                if settings.test == TestChoice::Both {
                    record.wald_p_value = wald_p_value;
                }
            }
            None => record.p_value = wald_p_value,
        }

        if !errors.is_empty() {
            let message = errors.join("; ");
            record.error = Some(message.clone());
            diag.error = Some(message);
        }
        records.push(record);
        categories.push(diag);
    }

    let primary: Vec<Option<f64>> = records.iter().map(|r| r.p_value).collect();
    for (record, q) in records.iter_mut().zip(bh_adjust_partial(&primary)?) {
        record.q_value = q;
    }
    if settings.test == TestChoice::Both {
        for (record, q) in records.iter_mut().zip(bh_adjust_partial(&wald_p)?) {
            record.wald_q_value = q;
        }
    }

    let n_tested = records.iter().filter(|r| r.p_value.is_some()).count();
    let summary = Summary {
        n_samples: counts.n_samples(),
        n_categories: n_cat,
        n_tested,
        n_failed: n_cat - n_tested,
        n_significant: records.iter().filter(|r| r.q_value.is_some_and(|q| q < settings.fdr)).count(),
    };
    let added = &fit.state.augmented_counts - counts.values();
    let fit_summary = FitSummary {
        converged: fit.state.converged,
        iterations: fit.state.iteration,
        max_abs_change: fit.state.max_abs_change,
        j_dagger: fit.state.j_dagger,
        j_dagger_id: ids[fit.state.j_dagger].clone(),
        total_augmentation: added.sum(),
        max_augmentation: added.max(),
        diagnostics: fit.state.diagnostics.clone(),
    };
    Ok(Analysis {
        target: settings.target.clone(),
        target_index: k,
        constraint: settings.constraint.to_string(),
        records,
        summary,
        fit: fit_summary,
        categories,
    })
}

/// Reads the inputs, analyzes them and writes the three output files.
pub fn run_analysis(config: &RunConfig) -> Result<Analysis> {
    config.settings.validate()?;
    let (counts, design) = ingest(&config.counts, &config.design)?;
    let analysis = analyze(&counts, &design, &config.settings)?;
    crate::output::write_analysis(&config.out_prefix, config, &analysis)?;
    Ok(analysis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraint_grammar() {
        assert_eq!("pseudo-huber:0.25".parse::<ConstraintArg>().unwrap(), ConstraintArg::PseudoHuber(0.25));
        assert_eq!("reference:taxon_3".parse::<ConstraintArg>().unwrap(), ConstraintArg::Reference("taxon_3".into()));
        for bad in ["pseudo-huber", "pseudo-huber:-1", "pseudo-huber:x", "reference:", "median:1"] {
            assert!(bad.parse::<ConstraintArg>().is_err(), "{bad}");
        }
        assert_eq!(ConstraintArg::default().to_string(), "pseudo-huber:0.1");
    }

    #[test]
    fn reference_resolves_by_id() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let spec = ConstraintArg::Reference("b".into()).resolve(&ids).unwrap();
        assert_eq!(spec, ConstraintSpec::Reference { category: 1 });
        assert!(ConstraintArg::Reference("c".into()).resolve(&ids).is_err());
    }

    #[test]
    fn settings_validation() {
        let mut s = AnalysisSettings::new("group");
        assert!(s.validate().is_ok());
        s.fdr = 1.0;
        assert!(s.validate().is_err());
        s.fdr = 0.1;
        s.threads = Some(0);
        assert!(s.validate().is_err());
    }
}
