//! Identifiability constraints and the pseudo-Huber smoothed median.
//!
//! Coefficient rows are only identified up to an additive constant, so every
//! row `k >= 1` is pinned by a shift-equivariant functional `g` with
//! `g(x + a) = g(x) + a`. Two functionals are provided: a reference category
//! (`g(x) = x_r`) and the pseudo-Huber smoothed median.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Iteration cap for the pseudo-Huber IRLS.
pub const MAX_CENTER_ITER: usize = 1000;

/// Default pseudo-Huber smoothing parameter.
pub const DEFAULT_DELTA: f64 = 0.1;

/// Default absolute tolerance on successive pseudo-Huber iterates.
pub const DEFAULT_CENTER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConstraintSpec<T> {
    /// Smoothed median with smoothing parameter `delta > 0`.
    PseudoHuber { delta: T },
    /// Fixes one category as the reference: `g(x) = x[category]`.
    Reference { category: usize },
}

impl<T: Scalar> Default for ConstraintSpec<T> {
    fn default() -> Self {
        ConstraintSpec::PseudoHuber { delta: T::lit(DEFAULT_DELTA) }
    }
}

impl<T: Scalar> ConstraintSpec<T> {
    pub fn pseudo_huber(delta: T) -> Result<Self> {
        if !(delta > T::zero()) || !delta.is_finite() {
            return Err(Error::InvalidInput(format!("pseudo-Huber delta must be positive, got {delta}")));
        }
        Ok(ConstraintSpec::PseudoHuber { delta })
    }

    /// Checks the spec against the number of categories.
    pub fn validate(&self, n_categories: usize) -> Result<()> {
        match *self {
            ConstraintSpec::PseudoHuber { delta } => {
                if delta > T::zero() && delta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!("pseudo-Huber delta must be positive, got {delta}")))
                }
            }
            ConstraintSpec::Reference { category } if category < n_categories => Ok(()),
            ConstraintSpec::Reference { category } => Err(Error::InvalidInput(format!(
                "reference category {category} out of range for {n_categories} categories"
            ))),
        }
    }

    /// Value `g(row)`.
    pub fn value(&self, row: &[T]) -> Result<T> {
        match *self {
            ConstraintSpec::PseudoHuber { delta } => pseudo_huber_center(row, delta, center_tol::<T>()),
            ConstraintSpec::Reference { category } => row
                .get(category)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("reference category {category} out of range"))),
        }
    }
}

/// Default IRLS tolerance, floored at a few ulps for single precision.
pub fn center_tol<T: Scalar>() -> T {
    let floor = <T as Scalar>::epsilon() * T::lit(16.0);
    let tol = T::lit(DEFAULT_CENTER_TOL);
    if tol > floor {
        tol
    } else {
        floor
    }
}

fn check_finite<T: Scalar>(x: &[T]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::InvalidInput("empty vector".into()));
    }
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite entry at position {pos}")));
    }
    Ok(())
}

/// Sample median (mean of the middle pair for even length).
pub fn median<T: Scalar>(x: &[T]) -> T {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) * T::lit(0.5)
    }
}

#[inline]
fn irls_weight<T: Scalar>(xj: T, c: T, delta: T) -> T {
    let r = (xj - c) / delta;
    T::one() / (T::one() + r * r).sqrt()
}

/// Minimizer of `sum_j delta^2 sqrt(1 + ((x_j - c) / delta)^2)` over `c`.
///
/// Starts at the sample median and iterates on the estimating equation
/// `sum_j psi(x_j - c) = 0`, which is decreasing in `c`. Each iteration takes
/// a Newton step when it stays inside the current sign bracket, otherwise
/// the weighted-mean (IRLS) update with weights
/// `(1 + ((x_j - c) / delta)^2)^(-1/2)`, otherwise bisection. IRLS alone
/// slows to a crawl when no entry lies within `delta` of the center.
/// Stops when successive iterates differ by less than `tol`.
pub fn pseudo_huber_center<T: Scalar>(x: &[T], delta: T, tol: T) -> Result<T> {
    check_finite(x)?;
    if !(delta > T::zero()) {
        return Err(Error::InvalidInput(format!("pseudo-Huber delta must be positive, got {delta}")));
    }
    let mut lo = x.iter().copied().fold(x[0], |a, b| a.min(b));
    let mut hi = x.iter().copied().fold(x[0], |a, b| a.max(b));
    let mut c = median(x);
    for _ in 0..MAX_CENTER_ITER {
        let (mut f, mut d, mut num, mut den) = (T::zero(), T::zero(), T::zero(), T::zero());
        for &xj in x {
            let w = irls_weight(xj, c, delta);
            f += (xj - c) * w;
            d += w * w * w;
            num += w * xj;
            den += w;
        }
        if f == T::zero() {
            return Ok(c);
        }
        if f > T::zero() {
            lo = c;
        } else {
            hi = c;
        }
        let inside = |v: T| v > lo && v < hi;
        let newton = c + f / d;
        let irls = num / den;
        let next = if inside(newton) {
            newton
        } else if inside(irls) {
            irls
        } else {
            (lo + hi) * T::lit(0.5)
        };
        let step = (next - c).abs();
        c = next;
        if step < tol || hi - lo < tol {
            return Ok(polish_center(x, delta, c));
        }
    }
    Err(Error::NoConvergence {
        what: "pseudo-Huber center",
        iterations: MAX_CENTER_ITER,
        last: c.as_f64(),
    })
}

/// A few safeguarded Newton steps on `sum_j psi(x_j - c) = 0` after the
/// iteration has converged, taking the center to full working precision.
fn polish_center<T: Scalar>(x: &[T], delta: T, mut c: T) -> T {
    let estimating = |c: T| {
        x.iter().fold((T::zero(), T::zero()), |(f, d), &xj| {
            let w = irls_weight(xj, c, delta);
            (f + (xj - c) * w, d + w * w * w)
        })
    };
    let (mut f, mut d) = estimating(c);
    for _ in 0..3 {
        if f == T::zero() || !(d > T::zero()) {
            break;
        }
        let next = c + f / d;
        let (nf, nd) = estimating(next);
        if !(nf.abs() < f.abs()) {
            break;
        }
        c = next;
        f = nf;
        d = nd;
    }
    c
}

/// Gradient of the pseudo-Huber center with respect to `x`: `w_j^3 / sum w^3`
/// with weights evaluated at the converged center.
pub fn pseudo_huber_gradient<T: Scalar>(x: &[T], delta: T) -> Result<Vec<T>> {
    let c = pseudo_huber_center(x, delta, center_tol::<T>())?;
    Ok(pseudo_huber_gradient_at(x, delta, c))
}

pub(crate) fn pseudo_huber_gradient_at<T: Scalar>(x: &[T], delta: T, center: T) -> Vec<T> {
    let cubes: Vec<T> = x
        .iter()
        .map(|&xj| {
            let w = irls_weight(xj, center, delta);
            w * w * w
        })
        .collect();
    let total: T = cubes.iter().fold(T::zero(), |a, &b| a + b);
    cubes.into_iter().map(|w3| w3 / total).collect()
}

/// Hessian of a constraint functional in the structured form
/// `diag(b) - b c^T - c b^T + s c c^T`, where `c` is the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintCurvature<T: Scalar> {
    pub gradient: DVector<T>,
    pub b: DVector<T>,
    pub s: T,
}

impl<T: Scalar> ConstraintCurvature<T> {
    pub fn dense(&self) -> DMatrix<T> {
        let c = &self.gradient;
        let b = &self.b;
        DMatrix::from_diagonal(b) - b * c.transpose() - c * b.transpose() + c * c.transpose() * self.s
    }
}

/// Second derivatives of `g`. Zero for a reference category. For the
/// pseudo-Huber center, implicit differentiation of `sum_j psi(x_j - c) = 0`
/// with `a_j = psi'(x_j - c)`, `b_j = psi''(x_j - c)` gives
/// `(diag(b) - b c^T - c b^T + (sum b / sum a) c c^T) / sum a`, `c = a / sum a`.
pub fn constraint_curvature<T: Scalar>(spec: &ConstraintSpec<T>, row: &[T]) -> Result<ConstraintCurvature<T>> {
    let (g, gradient) = evaluate_constraint(spec, row)?;
    match *spec {
        ConstraintSpec::Reference { .. } => Ok(ConstraintCurvature { gradient, b: DVector::zeros(row.len()), s: T::zero() }),
        ConstraintSpec::PseudoHuber { delta } => {
            let mut a_sum = T::zero();
            let mut b = DVector::zeros(row.len());
            for (j, &xj) in row.iter().enumerate() {
                let r = xj - g;
                let w = irls_weight(xj, g, delta);
                let w2 = w * w;
                a_sum += w2 * w;
                b[j] = -T::lit(3.0) * r / (delta * delta) * w2 * w2 * w;
            }
            let s = b.sum() / a_sum;
            Ok(ConstraintCurvature { gradient, b: b / a_sum, s })
        }
    }
}

/// Returns `(g(row), dg/drow)`.
pub fn evaluate_constraint<T: Scalar>(spec: &ConstraintSpec<T>, row: &[T]) -> Result<(T, DVector<T>)> {
    check_finite(row)?;
    match *spec {
        ConstraintSpec::Reference { category } => {
            spec.validate(row.len())?;
            let mut grad = DVector::zeros(row.len());
            grad[category] = T::one();
            Ok((row[category], grad))
        }
        ConstraintSpec::PseudoHuber { delta } => {
            let c = pseudo_huber_center(row, delta, center_tol::<T>())?;
            Ok((c, DVector::from_vec(pseudo_huber_gradient_at(row, delta, c))))
        }
    }
}

/// `p x J` coefficients together with the identifiability constraint that
/// pins rows `1..p` (row 0 absorbs detection effects and is never centered).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix<T: Scalar> {
    pub beta: DMatrix<T>,
    pub constraint: ConstraintSpec<T>,
}

impl<T: Scalar> CoefficientMatrix<T> {
    pub fn new(beta: DMatrix<T>, constraint: ConstraintSpec<T>) -> Result<Self> {
        constraint.validate(beta.ncols())?;
        Ok(Self { beta, constraint })
    }

    /// Largest `|g(beta_k)|` over constrained rows.
    pub fn constraint_violation(&self) -> Result<T> {
        let mut worst = T::zero();
        for k in 1..self.beta.nrows() {
            let row: Vec<T> = self.beta.row(k).iter().copied().collect();
            worst = worst.max(self.constraint.value(&row)?.abs());
        }
        Ok(worst)
    }
}

/// Shifts every row `k >= 1` by `-g(beta_k)` so that `g` vanishes on it.
pub fn center_rows<T: Scalar>(beta: &CoefficientMatrix<T>) -> Result<CoefficientMatrix<T>> {
    let mut out = beta.clone();
    for k in 1..out.beta.nrows() {
        let row: Vec<T> = out.beta.row(k).iter().copied().collect();
        let shift = beta.constraint.value(&row)?;
        for v in out.beta.row_mut(k).iter_mut() {
            *v -= shift;
        }
    }
    Ok(out)
}
