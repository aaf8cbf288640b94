use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use foldfit::{generate_beta, simulate_counts, CountDistribution, Hypothesis, SimDesign};
use foldfit_cli::output::{read_results_csv, read_results_json};
use foldfit_cli::{run_analysis, AnalysisSettings, DesignSource, RunConfig, TestChoice};
use nalgebra::DMatrix;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_foldfit");

/// Writes a counts TSV and a covariate CSV whose `arm` column is text.
fn write_dataset(dir: &Path, counts: &DMatrix<f64>) -> (PathBuf, PathBuf) {
    let (n, n_cat) = counts.shape();
    let mut text = String::from("sample");
    for j in 0..n_cat {
        text += &format!("\tc{}", j + 1);
    }
    text.push('\n');
    for i in 0..n {
        text += &format!("s{}", i + 1);
        for j in 0..n_cat {
            text += &format!("\t{}", counts[(i, j)]);
        }
        text.push('\n');
    }
    let counts_path = dir.join("counts.tsv");
    fs::write(&counts_path, text).unwrap();

    // listed in reverse order to exercise id reconciliation
    let mut cov = String::from("sample,arm\n");
    for i in (0..n).rev() {
        cov += &format!("s{},{}\n", i + 1, if i < n / 2 { "control" } else { "treated" });
    }
    let cov_path = dir.join("covariates.csv");
    fs::write(&cov_path, cov).unwrap();
    (counts_path, cov_path)
}

fn simulated(n: usize, j: usize, dist: CountDistribution, beta: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
    let design = SimDesign::new(n, j, dist, Hypothesis::Null, seed);
    simulate_counts(&design, beta, 0).unwrap().counts.values().clone()
}

fn config(dir: &Path, counts: PathBuf, cov: PathBuf, test: TestChoice) -> RunConfig {
    let mut settings = AnalysisSettings::new("arm_treated");
    settings.test = test;
    RunConfig { counts, design: DesignSource::Covariates(cov), out_prefix: dir.join("out/run"), settings }
}

fn run_bin(args: &[&str]) -> (bool, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn error_report(stderr: &str) -> Value {
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("json error report");
    serde_json::from_str(line).unwrap()
}

#[test]
fn strong_effect_is_discovered() {
    let dir = tempfile::tempdir().unwrap();
    let beta = generate_beta(10, Hypothesis::StrongAlt).unwrap();
    let counts = simulated(50, 10, CountDistribution::Poisson, &beta, 3);
    let (c, v) = write_dataset(dir.path(), &counts);
    let analysis = run_analysis(&config(dir.path(), c, v, TestChoice::Score)).unwrap();
    assert_eq!(analysis.records.len(), 10);
    let target = &analysis.records[4];
    assert_eq!(target.category_id, "c5");
    assert!(target.q_value.unwrap() < 0.1, "{target:?}");
    assert!(target.estimate.unwrap() > 3.0);
    for r in &analysis.records {
        if let (Some(p), Some(q)) = (r.p_value, r.q_value) {
            assert!(q >= p);
        }
        let (lo, hi, est) = (r.ci_lo.unwrap(), r.ci_hi.unwrap(), r.estimate.unwrap());
        assert!(lo < est && est < hi);
        assert!((0.0..=1.0).contains(&r.detection_proportion));
    }
}

#[test]
fn wald_null_rejections_near_nominal() {
    let dir = tempfile::tempdir().unwrap();
    let mut beta = generate_beta(50, Hypothesis::Null).unwrap();
    beta.row_mut(1).fill(0.0);
    let counts = simulated(250, 50, CountDistribution::Poisson, &beta, 8);
    let (c, v) = write_dataset(dir.path(), &counts);
    let analysis = run_analysis(&config(dir.path(), c, v, TestChoice::Wald)).unwrap();
    let p: Vec<f64> = analysis.records.iter().filter_map(|r| r.p_value).collect();
    assert_eq!(p.len(), 50);
    let rate = p.iter().filter(|&&p| p < 0.05).count() as f64 / 50.0;
    // 0.05 plus three binomial standard deviations
    assert!(rate <= 0.05 + 3.0 * (0.05f64 * 0.95 / 50.0).sqrt(), "{rate}");
}

#[test]
fn csv_and_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let beta = generate_beta(6, Hypothesis::WeakAlt).unwrap();
    let counts = simulated(20, 6, CountDistribution::zinb(), &beta, 5);
    let (c, v) = write_dataset(dir.path(), &counts);
    let cfg = config(dir.path(), c, v, TestChoice::Both);
    let analysis = run_analysis(&cfg).unwrap();
    let prefix = dir.path().join("out/run");
    let from_csv = read_results_csv(&prefix.with_extension("results.csv")).unwrap();
    let from_json = read_results_json(&prefix.with_extension("results.json")).unwrap();
    assert_eq!(from_csv, analysis.records);
    assert_eq!(from_json.records, analysis.records);
    assert_eq!(from_json.schema_version, 1);
    assert_eq!(from_json.summary, analysis.summary);
    assert!(analysis.records.iter().all(|r| r.wald_p_value.is_some() && r.wald_q_value.is_some()));

    let header = fs::read_to_string(prefix.with_extension("results.csv")).unwrap();
    assert_eq!(
        header.lines().next().unwrap(),
        "category_id,estimate,fold_change,std_error,ci_lo,ci_hi,p_value,q_value,detection_proportion,wald_p_value,wald_q_value,error"
    );
    let diag: Value = serde_json::from_str(&fs::read_to_string(prefix.with_extension("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["schema_version"], 1);
    assert_eq!(diag["unconstrained_fit"]["converged"], true);
    assert_eq!(diag["categories"].as_array().unwrap().len(), 6);
    assert!(diag["categories"][0]["constrained_fit"]["outer_iterations"].as_u64().unwrap() >= 1);
}

#[test]
fn failing_category_is_recorded_in_row() {
    // Under a reference constraint the reference category's contrast is identically zero.
    let dir = tempfile::tempdir().unwrap();
    let beta = generate_beta(5, Hypothesis::Null).unwrap();
    let counts = simulated(12, 5, CountDistribution::Poisson, &beta, 2);
    let (c, v) = write_dataset(dir.path(), &counts);
    let mut cfg = config(dir.path(), c, v, TestChoice::Wald);
    cfg.settings.constraint = "reference:c2".parse().unwrap();
    let analysis = run_analysis(&cfg).unwrap();
    let reference = &analysis.records[1];
    assert!(reference.p_value.is_none() && reference.q_value.is_none());
    assert!(reference.error.as_deref().unwrap().starts_with("wald:"));
    assert_eq!(analysis.summary.n_tested, 4);
    assert_eq!(analysis.summary.n_failed, 1);
}

#[test]
fn binary_fit_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let beta = generate_beta(8, Hypothesis::WeakAlt).unwrap();
    let counts = simulated(16, 8, CountDistribution::zinb(), &beta, 9);
    let (c, v) = write_dataset(dir.path(), &counts);
    let run = |prefix: &str, threads: &str| {
        let prefix = dir.path().join(prefix);
        let (ok, err) = run_bin(&[
            "fit",
            "--counts", c.to_str().unwrap(),
            "--covariates", v.to_str().unwrap(),
            "--target", "arm_treated",
            "--test", "both",
            "--seed", "7",
            "--threads", threads,
            "--out-prefix", prefix.to_str().unwrap(),
        ]);
        assert!(ok, "{err}");
        ["results.json", "diagnostics.json", "results.csv"].map(|s| fs::read(prefix.with_extension(s)).unwrap())
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c3 = run("c", "3");
    assert_eq!(a, b);
    assert_eq!(a, c3);
}

#[test]
fn prebuilt_design_matches_covariates() {
    let dir = tempfile::tempdir().unwrap();
    let beta = generate_beta(5, Hypothesis::StrongAlt).unwrap();
    let counts = simulated(10, 5, CountDistribution::Poisson, &beta, 4);
    let (c, v) = write_dataset(dir.path(), &counts);
    let mut design = String::from("sample,(Intercept),arm_treated\n");
    for i in 0..10 {
        design += &format!("s{},1,{}\n", i + 1, (i >= 5) as u8);
    }
    let design_path = dir.path().join("design.csv");
    fs::write(&design_path, design).unwrap();
    let from_cov = run_analysis(&config(dir.path(), c.clone(), v, TestChoice::Wald)).unwrap();
    let mut cfg = config(dir.path(), c, design_path, TestChoice::Wald);
    cfg.design = DesignSource::Design(dir.path().join("design.csv"));
    let from_design = run_analysis(&cfg).unwrap();
    assert_eq!(from_cov.records, from_design.records);
}

#[test]
fn single_category_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.tsv"), "id\tonly\na\t3\nb\t5\nc\t1\nd\t2\n").unwrap();
    fs::write(dir.path().join("x.tsv"), "id\tg\na\t0\nb\t0\nc\t1\nd\t1\n").unwrap();
    let (ok, err) = run_bin(&[
        "fit",
        "--counts", dir.path().join("c.tsv").to_str().unwrap(),
        "--covariates", dir.path().join("x.tsv").to_str().unwrap(),
        "--target", "g",
        "--out-prefix", dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!ok);
    let report = error_report(&err);
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["error"]["kind"], "config");
    assert!(report["error"]["message"].as_str().unwrap().contains("single category"));
}

#[test]
fn extra_sample_id_is_listed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.csv"), "id,a,b\ns1,3,1\ns2,5,0\n").unwrap();
    fs::write(dir.path().join("x.csv"), "id,g\ns1,0\ns2,1\nghost,1\n").unwrap();
    let (ok, err) = run_bin(&[
        "fit",
        "--counts", dir.path().join("c.csv").to_str().unwrap(),
        "--covariates", dir.path().join("x.csv").to_str().unwrap(),
        "--target", "g",
        "--out-prefix", dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!ok);
    let report = error_report(&err);
    assert_eq!(report["error"]["kind"], "sample-mismatch");
    assert_eq!(report["error"]["details"]["only_in_covariates"][0], "ghost");
}

#[test]
fn negative_count_reports_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.csv"), "id,a,b\ns1,3,1\ns2,-5,0\n").unwrap();
    fs::write(dir.path().join("x.csv"), "id,g\ns1,0\ns2,1\n").unwrap();
    let (ok, err) = run_bin(&[
        "fit",
        "--counts", dir.path().join("c.csv").to_str().unwrap(),
        "--covariates", dir.path().join("x.csv").to_str().unwrap(),
        "--target", "g",
        "--out-prefix", dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!ok);
    let report = error_report(&err);
    assert_eq!(report["error"]["kind"], "cell");
    assert_eq!(report["error"]["details"]["line"], 3);
    assert_eq!(report["error"]["details"]["column"], "a");
}

#[test]
fn bad_target_and_constraint_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let beta = generate_beta(4, Hypothesis::Null).unwrap();
    let counts = simulated(8, 4, CountDistribution::Poisson, &beta, 1);
    let (c, v) = write_dataset(dir.path(), &counts);
    for (target, constraint) in [("(Intercept)", "pseudo-huber:0.1"), ("dose", "pseudo-huber:0.1"), ("arm_treated", "median")] {
        let (ok, err) = run_bin(&[
            "fit",
            "--counts", c.to_str().unwrap(),
            "--covariates", v.to_str().unwrap(),
            "--target", target,
            "--constraint", constraint,
            "--out-prefix", dir.path().join("o").to_str().unwrap(),
        ]);
        assert!(!ok);
        assert_eq!(error_report(&err)["error"]["kind"], "config", "{target} {constraint}: {err}");
    }
}

#[test]
fn simulate_single_replicate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let (ok, err) = run_bin(&[
        "simulate", "--dist", "poisson", "--n", "10", "--J", "6", "--reps", "1", "--out", out.to_str().unwrap(),
    ]);
    assert!(ok, "{err}");
    let pvalues = fs::read_to_string(out.with_extension("pvalues.csv")).unwrap();
    let lines: Vec<&str> = pvalues.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "replicate,score_p_value,wald_p_value,redraws,error");
    let report = fs::read_to_string(out.with_extension("report.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(report.as_bytes());
    let mut n_rows = 0;
    for row in rows.records() {
        let row = row.unwrap();
        let rate: f64 = row[9].parse().unwrap();
        assert!(rate == 0.0 || rate == 1.0);
        assert_eq!(&row[0], "poisson");
        assert_eq!(&row[1], "6");
        assert_eq!(&row[2], "10");
        n_rows += 1;
    }
    assert_eq!(n_rows, 2);
}

#[test]
fn simulate_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let (ok, err) = run_bin(&[
            "simulate", "--dist", "zinb", "--n", "10", "--J", "6", "--hypothesis", "weak-alt", "--reps", "6",
            "--seed", "11", "--threads", threads, "--out", out.to_str().unwrap(),
        ]);
        assert!(ok, "{err}");
        ["report.csv", "pvalues.csv", "report.json"].map(|s| fs::read(out.with_extension(s)).unwrap())
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "4"));
}

#[test]
fn simulate_rejects_invalid_design() {
    let dir = tempfile::tempdir().unwrap();
    let (ok, err) = run_bin(&[
        "simulate", "--dist", "poisson", "--n", "7", "--J", "6", "--reps", "2",
        "--out", dir.path().join("s").to_str().unwrap(),
    ]);
    assert!(!ok);
    assert_eq!(error_report(&err)["error"]["kind"], "model");
}
