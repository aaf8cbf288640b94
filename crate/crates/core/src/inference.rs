//! Robust (sandwich) score and Wald tests for a single coefficient contrast,
//! Wald intervals, and Benjamini-Hochberg adjustment.
//!
//! All sandwich pieces are evaluated on the original counts in the reduced
//! parametrization. `h(beta) = beta[k*, j*] - g(beta_k*)` is the tested
//! contrast.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma_ur;

use crate::constrained::{fit_constrained, AugLagDiagnostics, AugLagOptions, ConstraintTarget};
use crate::constraint::{evaluate_constraint, ConstraintSpec};
use crate::data::{CountMatrix, DesignMatrix};
use crate::error::{Error, Result};
use crate::linalg::{sym_pinv, PINV_REL_FLOOR};
use crate::param::Reduced;
use crate::penalized::likelihood::{fitted_probabilities, multinomial_information};
use crate::penalized::UnconstrainedFit;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    RobustScore,
    RobustWald,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub target: ConstraintTarget,
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    /// Centered unconstrained estimate of `beta[k*, j*]`.
    pub estimate: f64,
    /// Robust standard error of the contrast (Wald only).
    pub std_error: Option<f64>,
    /// Information directions dropped by the pseudo-inverse.
    pub dropped_directions: usize,
}

/// Score vector, information, outer product of per-sample scores and the
/// contrast Jacobian, all in the reduced parametrization.
#[derive(Debug, Clone)]
pub struct SandwichParts<T: Scalar> {
    pub score: DVector<T>,
    pub information: DMatrix<T>,
    pub contributions: DMatrix<T>,
    pub jacobian: DVector<T>,
}

impl<T: Scalar> SandwichParts<T> {
    /// `sum_i s_i s_i^T`.
    pub fn meat(&self) -> DMatrix<T> {
        &self.contributions * self.contributions.transpose()
    }
}

/// Per-sample score contributions `s_i = X~_i^T (y_i - y_i. p_i)`, one column per sample.
pub fn score_contributions<T: Scalar>(beta: &DMatrix<T>, y: &DMatrix<T>, x: &DMatrix<T>, param: &Reduced) -> DMatrix<T> {
    let probs = fitted_probabilities(beta, x);
    let n = y.nrows();
    let mut out = DMatrix::zeros(param.dim(), n);
    for i in 0..n {
        let total = y.row(i).sum();
        for j in param.free_categories() {
            let resid = y[(i, j)] - total * probs[(i, j)];
            let s = param.slot(j).unwrap();
            for k in 0..param.p {
                out[(s * param.p + k, i)] = x[(i, k)] * resid;
            }
        }
    }
    out
}

/// Gradient of `h(beta) = beta[k*, j*] - g(beta_k*)` with respect to the free
/// coefficients. The `j_dagger` entry of row `k*` is fixed at zero and drops out.
pub fn constraint_jacobian<T: Scalar>(
    beta: &DMatrix<T>,
    constraint: &ConstraintSpec<T>,
    target: ConstraintTarget,
    param: &Reduced,
) -> Result<DVector<T>> {
    let row: Vec<T> = beta.row(target.k_star).iter().copied().collect();
    let (_, grad) = evaluate_constraint(constraint, &row)?;
    let mut out = DVector::zeros(param.dim());
    for j in param.free_categories() {
        let mut e = -grad[j];
        if j == target.j_star {
            e += T::one();
        }
        out[param.index(target.k_star, j).unwrap()] = e;
    }
    Ok(out)
}

/// `h(beta) = beta[k*, j*] - g(beta_k*)`.
pub fn contrast<T: Scalar>(beta: &DMatrix<T>, constraint: &ConstraintSpec<T>, target: ConstraintTarget) -> Result<T> {
    let row: Vec<T> = beta.row(target.k_star).iter().copied().collect();
    Ok(row[target.j_star] - constraint.value(&row)?)
}

pub fn sandwich_parts<T: Scalar>(
    beta: &DMatrix<T>,
    y: &DMatrix<T>,
    x: &DMatrix<T>,
    constraint: &ConstraintSpec<T>,
    target: ConstraintTarget,
    j_dagger: usize,
) -> Result<SandwichParts<T>> {
    let param = Reduced::new(x.ncols(), y.ncols(), j_dagger);
    if beta.column(j_dagger).iter().any(|&v| v != T::zero()) {
        return Err(Error::InvalidInput("beta must have a zero reference column".into()));
    }
    let contributions = score_contributions(beta, y, x, &param);
    let score = contributions.column_sum();
    let probs = fitted_probabilities(beta, x);
    let totals = DVector::from_fn(y.nrows(), |i, _| y.row(i).sum());
    let information = multinomial_information(&probs, &totals, x, &param);
    let jacobian = constraint_jacobian(beta, constraint, target, &param)?;
    Ok(SandwichParts { score, information, contributions, jacobian })
}

/// `w = I^+ F^T` and the middle factor `sum_i (w^T s_i)^2 = F I^+ D I^+ F^T`.
fn sandwich_direction<T: Scalar>(parts: &SandwichParts<T>) -> Result<(DVector<T>, T, usize)> {
    let inv = sym_pinv(&parts.information, T::lit(PINV_REL_FLOOR));
    let w = &inv.inverse * &parts.jacobian;
    let projected = parts.contributions.transpose() * &w;
    let middle = projected.norm_squared();
    if !(middle > T::zero()) || !middle.is_finite() {
        return Err(Error::DegenerateTest(format!("sandwich variance is {middle}")));
    }
    Ok((w, middle, inv.dropped))
}

/// Robust score statistic `(F I^+ S)^2 / (F I^+ D I^+ F^T)` before the small-sample factor.
pub fn score_statistic<T: Scalar>(parts: &SandwichParts<T>) -> Result<(T, usize)> {
    let (w, middle, dropped) = sandwich_direction(parts)?;
    let a = w.dot(&parts.score);
    Ok((a * a / middle, dropped))
}

/// `(h^2 / v, v)` with `v = F I^+ D I^+ F^T`.
pub fn wald_statistic<T: Scalar>(parts: &SandwichParts<T>, h: T) -> Result<(T, T, usize)> {
    let (_, v, dropped) = sandwich_direction(parts)?;
    Ok((h * h / v, v, dropped))
}

/// Upper tail of the chi-squared distribution with one degree of freedom.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(0.5, x / 2.0).clamp(0.0, 1.0)
}

fn check_fit<T: Scalar>(counts: &CountMatrix<T>, design: &DesignMatrix<T>, ha_fit: &UnconstrainedFit<T>) -> Result<()> {
    if counts.n_samples() != design.n_samples() || ha_fit.state.beta.shape() != (design.n_covariates(), counts.n_categories()) {
        return Err(Error::DimensionMismatch("fit does not match the data".into()));
    }
    Ok(())
}

fn centered_estimate<T: Scalar>(ha_fit: &UnconstrainedFit<T>, target: ConstraintTarget) -> f64 {
    ha_fit.coefficients.beta[(target.k_star, target.j_star)].as_f64()
}

/// Score test with its constrained fit diagnostics.
#[derive(Debug, Clone)]
pub struct ScoreTestOutcome {
    pub result: TestResult,
    pub constrained: AugLagDiagnostics,
}

/// Robust score test of `beta[k*, j*] = g(beta_k*)`: fits under the null, then
/// evaluates the sandwich on the original counts and applies the `n / (n - 1)` factor.
pub fn robust_score_test<T: Scalar>(
    counts: &CountMatrix<T>,
    design: &DesignMatrix<T>,
    constraint: &ConstraintSpec<T>,
    target: ConstraintTarget,
    ha_fit: &UnconstrainedFit<T>,
    options: &AugLagOptions<T>,
) -> Result<ScoreTestOutcome> {
    check_fit(counts, design, ha_fit)?;
    let null_fit = fit_constrained(counts, design, constraint, target, &ha_fit.state, options)?;
    let parts = sandwich_parts(&null_fit.beta, counts.values(), design.values(), constraint, target, null_fit.j_dagger)?;
    let (raw, dropped) = score_statistic(&parts)?;
    let n = counts.n_samples() as f64;
    let statistic = raw.as_f64() * n / (n - 1.0);
    Ok(ScoreTestOutcome {
        result: TestResult {
            kind: TestKind::RobustScore,
            target,
            statistic,
            df: 1,
            p_value: chi2_1_sf(statistic),
            estimate: centered_estimate(ha_fit, target),
            std_error: None,
            dropped_directions: dropped,
        },
        constrained: null_fit.diagnostics,
    })
}

/// Robust Wald test of `beta[k*, j*] = g(beta_k*)` at the unconstrained fit.
pub fn robust_wald_test<T: Scalar>(
    counts: &CountMatrix<T>,
    design: &DesignMatrix<T>,
    constraint: &ConstraintSpec<T>,
    target: ConstraintTarget,
    ha_fit: &UnconstrainedFit<T>,
) -> Result<TestResult> {
    check_fit(counts, design, ha_fit)?;
    let beta = &ha_fit.state.beta;
    let parts = sandwich_parts(beta, counts.values(), design.values(), constraint, target, ha_fit.state.j_dagger)?;
    let h = contrast(beta, constraint, target)?;
    let (statistic, v, dropped) = wald_statistic(&parts, h)?;
    let statistic = statistic.as_f64();
    Ok(TestResult {
        kind: TestKind::RobustWald,
        target,
        statistic,
        df: 1,
        p_value: chi2_1_sf(statistic),
        estimate: centered_estimate(ha_fit, target),
        std_error: Some(v.as_f64().sqrt()),
        dropped_directions: dropped,
    })
}

/// Robust Wald tests for every category of row `k`, sharing one
/// pseudo-inverse of the information.
pub fn robust_wald_tests_for_row<T: Scalar>(
    counts: &CountMatrix<T>,
    design: &DesignMatrix<T>,
    constraint: &ConstraintSpec<T>,
    k: usize,
    ha_fit: &UnconstrainedFit<T>,
) -> Result<Vec<Result<TestResult>>> {
    check_fit(counts, design, ha_fit)?;
    let n_cat = counts.n_categories();
    ConstraintTarget::new(k, 0).validate(design.n_covariates(), n_cat)?;
    let beta = &ha_fit.state.beta;
    let parts = sandwich_parts(beta, counts.values(), design.values(), constraint, ConstraintTarget::new(k, 0), ha_fit.state.j_dagger)?;
    let inv = sym_pinv(&parts.information, T::lit(PINV_REL_FLOOR));
    let param = Reduced::new(design.n_covariates(), n_cat, ha_fit.state.j_dagger);
    Ok((0..n_cat)
        .map(|j| {
            let target = ConstraintTarget::new(k, j);
            let f = constraint_jacobian(beta, constraint, target, &param)?;
            let w = &inv.inverse * f;
            let v = (parts.contributions.transpose() * &w).norm_squared();
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::DegenerateTest(format!("sandwich variance is {v}")));
            }
            let h = contrast(beta, constraint, target)?;
            let statistic = (h * h / v).as_f64();
            Ok(TestResult {
                kind: TestKind::RobustWald,
                target,
                statistic,
                df: 1,
                p_value: chi2_1_sf(statistic),
                estimate: centered_estimate(ha_fit, target),
                std_error: Some(v.as_f64().sqrt()),
                dropped_directions: inv.dropped,
            })
        })
        .collect())
}

/// Robust score tests for every category of row `k`, in parallel over categories.
pub fn robust_score_tests_for_row<T: Scalar + Send + Sync>(
    counts: &CountMatrix<T>,
    design: &DesignMatrix<T>,
    constraint: &ConstraintSpec<T>,
    k: usize,
    ha_fit: &UnconstrainedFit<T>,
    options: &AugLagOptions<T>,
) -> Vec<Result<ScoreTestOutcome>> {
    (0..counts.n_categories())
        .into_par_iter()
        .map(|j| robust_score_test(counts, design, constraint, ConstraintTarget::new(k, j), ha_fit, options))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    /// `exp(lower)`, `exp(upper)`: the interval on the fold-change scale.
    pub fold_lower: f64,
    pub fold_upper: f64,
}

/// `estimate +- z_{(1 + level) / 2} * std_error`.
pub fn wald_confidence_interval(estimate: f64, std_error: f64, level: f64) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level must be in (0, 1), got {level}")));
    }
    if !(std_error >= 0.0) {
        return Err(Error::InvalidInput(format!("standard error must be nonnegative, got {std_error}")));
    }
    let z = Normal::standard().inverse_cdf((1.0 + level) / 2.0);
    let (lower, upper) = (estimate - z * std_error, estimate + z * std_error);
    Ok(ConfidenceInterval { lower, upper, fold_lower: lower.exp(), fold_upper: upper.exp() })
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn bh_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        // m / rank >= 1, so the product never rounds below p
        running = running.min(p_values[idx] * (m as f64 / (rank + 1) as f64)).min(1.0);
        q[idx] = running;
    }
    Ok(q)
}

/// BH adjustment that skips missing p-values; `m` counts only present values.
pub fn bh_adjust_partial(p_values: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
    let present: Vec<f64> = p_values.iter().flatten().copied().collect();
    let adjusted = bh_adjust(&present)?;
    let mut it = adjusted.into_iter();
    Ok(p_values.iter().map(|p| p.map(|_| it.next().unwrap())).collect())
}
