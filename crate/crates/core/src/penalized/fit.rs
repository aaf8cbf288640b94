use nalgebra::{DMatrix, DVector};

use crate::constraint::{center_rows, CoefficientMatrix, ConstraintSpec};
use crate::data::{CountMatrix, DesignMatrix};
use crate::error::{Error, Result};
use crate::linalg::max_abs_diff;
use crate::param::{choose_j_dagger, impose_reference_column};
use crate::penalized::hat::{augment_counts, hat_diagonals};
use crate::penalized::likelihood::{clamped_exp, profile_z};
use crate::Scalar;

/// Line-search and convergence settings for the penalized fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions<T> {
    /// Stop when the largest absolute coefficient change falls below this.
    pub tol: T,
    pub max_iter: usize,
    /// Pseudocount added to every cell in the first iteration only.
    pub initial_augmentation: T,
    /// Armijo sufficient-increase constant.
    pub armijo_c: T,
    /// Largest allowed absolute change of any coefficient in one step.
    pub max_step: T,
    /// First trial step length; halved until the Armijo condition holds.
    pub initial_step: T,
    pub max_halvings: usize,
    /// Ridge multipliers (relative to `trace(I) / p`) tried when the column
    /// information is ill-conditioned.
    pub ridge_schedule: Vec<T>,
    /// Apply the Firth data augmentation (set false for plain ML).
    pub penalize: bool,
    /// Also update column `j_dagger` in each sweep and then re-impose the
    /// convenience constraint. Removes the slowly converging common mode
    /// of the free columns when `J` is large.
    pub sweep_reference_column: bool,
    /// Override the convenience-constraint category.
    pub j_dagger: Option<usize>,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-6),
            max_iter: 1000,
            initial_augmentation: T::lit(0.01),
            armijo_c: T::lit(1e-4),
            max_step: T::one(),
            initial_step: T::lit(0.5),
            max_halvings: 50,
            ridge_schedule: [1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2].iter().map(|&s| T::lit(s)).collect(),
            penalize: true,
            sweep_reference_column: true,
            j_dagger: None,
        }
    }
}

impl<T: Scalar> FitOptions<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol > T::zero()
            && self.max_iter >= 1
            && self.armijo_c > T::zero()
            && self.max_step > T::zero()
            && self.initial_step > T::zero()
            && self.initial_augmentation >= T::zero()
            && self.ridge_schedule.windows(2).all(|w| w[0] < w[1])
            && self.ridge_schedule.iter().all(|&s| s > T::zero());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid fit options: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct FitDiagnostics {
    /// Categories with no positive observation.
    pub zero_columns: Vec<usize>,
    /// Column updates where Armijo failed and a zero step was taken.
    pub stalled_updates: usize,
    /// Column updates that needed a ridge term.
    pub ridged_updates: usize,
    /// Linear predictors clamped before exponentiation.
    pub clamped_predictors: usize,
    /// Hat-matrix computations that fell back to a pseudo-inverse.
    pub pseudo_inverse_hats: usize,
}

/// Working state of the penalized fit, in the convenience parametrization
/// (column `j_dagger` of `beta` is zero).
#[derive(Debug, Clone)]
pub struct FitState<T: Scalar> {
    pub beta: DMatrix<T>,
    pub z: DVector<T>,
    pub augmented_counts: DMatrix<T>,
    pub j_dagger: usize,
    pub iteration: usize,
    pub max_abs_change: T,
    pub converged: bool,
    pub diagnostics: FitDiagnostics,
}

/// Centered estimate plus the final working state.
#[derive(Debug, Clone)]
pub struct UnconstrainedFit<T: Scalar> {
    pub coefficients: CoefficientMatrix<T>,
    pub state: FitState<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnUpdate<T: Scalar> {
    pub column: DVector<T>,
    pub stalled: bool,
    pub ridged: bool,
    pub clamped: usize,
}

fn column_loglik<T: Scalar>(x: &DMatrix<T>, col: &DVector<T>, z: &DVector<T>, y: &[T]) -> (T, usize) {
    let eta = x * col;
    let mut total = T::zero();
    let mut clamped = 0;
    for i in 0..eta.len() {
        let lin = eta[i] + z[i];
        let (mu, c) = clamped_exp(lin);
        clamped += c as usize;
        total += y[i] * lin - mu;
    }
    (total, clamped)
}

/// Solves `(info + sigma I) d = score`, escalating `sigma` along the schedule
/// until the Cholesky factor is usable.
pub(crate) fn ridged_direction<T: Scalar>(info: &DMatrix<T>, score: &DVector<T>, schedule: &[T]) -> Option<(DVector<T>, bool)> {
    let p = info.nrows();
    let well_conditioned = |m: &DMatrix<T>| {
        m.clone().cholesky().and_then(|c| {
            let d = c.l_dirty().diagonal();
            let lo = d.iter().fold(T::max_value().unwrap(), |a, &b| a.min(b));
            let hi = d.iter().fold(T::zero(), |a, &b| a.max(b));
            let ratio = lo / hi;
            (ratio * ratio > <T as Scalar>::epsilon() * T::lit(1e2)).then_some(c)
        })
    };
    if let Some(c) = well_conditioned(info) {
        let d = c.solve(score);
        if d.iter().all(|v| v.is_finite()) {
            return Some((d, false));
        }
    }
    let scale = info.trace() / T::from_count(p);
    let scale = if scale > T::zero() && scale.is_finite() { scale } else { T::one() };
    for &sigma in schedule {
        let m = info + DMatrix::identity(p, p) * (sigma * scale);
        if let Some(c) = well_conditioned(&m) {
            let d = c.solve(score);
            if d.iter().all(|v| v.is_finite()) {
                return Some((d, true));
            }
        }
    }
    None
}

/// One Fisher-scoring step with Armijo backtracking for a single column of
/// beta, holding `z` fixed. The column log likelihood never decreases.
pub fn scoring_update_column<T: Scalar>(
    x: &DMatrix<T>,
    column: &DVector<T>,
    z: &DVector<T>,
    y: &[T],
    options: &FitOptions<T>,
) -> ColumnUpdate<T> {
    let (n, p) = x.shape();
    let eta = x * column;
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    let mut clamped = 0;
    for i in 0..n {
        let (mu, c) = clamped_exp(eta[i] + z[i]);
        clamped += c as usize;
        let xi = x.row(i).transpose();
        score.axpy(y[i] - mu, &xi, T::one());
        info.ger(mu, &xi, &xi, T::one());
    }
    let unchanged = |stalled| ColumnUpdate { column: column.clone(), stalled, ridged: false, clamped };
    if score.iter().all(|&s| s == T::zero()) {
        return unchanged(false);
    }
    let Some((direction, ridged)) = ridged_direction(&info, &score, &options.ridge_schedule) else {
        return unchanged(true);
    };
    let slope = direction.dot(&score);
    if !(slope > T::zero()) {
        return unchanged(slope < T::zero());
    }
    let (l0, _) = column_loglik(x, column, z, y);
    let mut alpha = options.initial_step;
    for _ in 0..options.max_halvings {
        let trial = column + &direction * alpha;
        let (l1, _) = column_loglik(x, &trial, z, y);
        if l1.is_finite() && l1 >= l0 + options.armijo_c * alpha * slope {
            let mut step = &direction * alpha;
            let largest = step.amax();
            if largest > options.max_step {
                step *= options.max_step / largest;
            }
            return ColumnUpdate { column: column + step, stalled: false, ridged, clamped };
        }
        alpha *= T::lit(0.5);
    }
    unchanged(true)
}

/// Firth-penalized estimate by iteratively refitting on augmented counts.
///
/// Each outer iteration runs one coordinate sweep of scoring updates over the
/// columns of beta (with `z` fixed), re-profiles `z`, then recomputes the
/// augmentation `y + h / 2` from the hat diagonals at the new estimate. The
/// returned coefficients are centered with `constraint`; the state keeps the
/// convenience parametrization and the final augmented counts.
pub fn fit_unconstrained<T: Scalar>(
    counts: &CountMatrix<T>,
    design: &DesignMatrix<T>,
    constraint: &ConstraintSpec<T>,
    options: &FitOptions<T>,
) -> Result<UnconstrainedFit<T>> {
    options.validate()?;
    let y = counts.values();
    let x = design.values();
    let (n, n_cat) = y.shape();
    if design.n_samples() != n {
        return Err(Error::DimensionMismatch(format!("{n} count rows but {} design rows", design.n_samples())));
    }
    if n_cat < 2 {
        return Err(Error::InvalidInput("at least two categories are required".into()));
    }
    constraint.validate(n_cat)?;
    let j_dagger = match options.j_dagger {
        Some(j) if j < n_cat => j,
        Some(j) => return Err(Error::InvalidInput(format!("j_dagger {j} out of range"))),
        None => choose_j_dagger(&counts.detections()),
    };
    let p = design.n_covariates();

    let mut diagnostics = FitDiagnostics { zero_columns: counts.zero_columns(), ..Default::default() };
    let mut beta = DMatrix::zeros(p, n_cat);
    let mut augmented = y.map(|v| v + options.initial_augmentation);
    let mut z = profile_z(&beta, &augmented, x);
    let mut converged = false;
    let mut change = T::zero();
    let mut iteration = 0;

    let columns: Vec<usize> = (0..n_cat)
        .filter(|&j| options.sweep_reference_column || j != j_dagger)
        .collect();
    let mut y_col = vec![T::zero(); n];
    for t in 1..=options.max_iter {
        iteration = t;
        let previous = beta.clone();
        for &j in &columns {
            for i in 0..n {
                y_col[i] = augmented[(i, j)];
            }
            let update = scoring_update_column(x, &beta.column(j).into_owned(), &z, &y_col, options);
            diagnostics.stalled_updates += update.stalled as usize;
            diagnostics.ridged_updates += update.ridged as usize;
            diagnostics.clamped_predictors += update.clamped;
            beta.set_column(j, &update.column);
        }
        impose_reference_column(&mut beta, j_dagger);

        if options.penalize {
            let z_original = profile_z(&beta, y, x);
            let hat = hat_diagonals(&beta, &z_original, x, j_dagger);
            diagnostics.pseudo_inverse_hats += hat.pseudo_inverse as usize;
            augmented = augment_counts(y, &hat.values);
        } else {
            augmented = y.clone();
        }
        z = profile_z(&beta, &augmented, x);

        change = max_abs_diff(&beta, &previous);
        if !change.is_finite() {
            return Err(Error::NoConvergence { what: "penalized fit", iterations: t, last: change.as_f64() });
        }
        if change < options.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("penalized fit stopped at max_iter={} with max change {change}", options.max_iter);
    }

    let coefficients = center_rows(&CoefficientMatrix::new(beta.clone(), *constraint)?)?;
    Ok(UnconstrainedFit {
        coefficients,
        state: FitState {
            beta,
            z,
            augmented_counts: augmented,
            j_dagger,
            iteration,
            max_abs_change: change,
            converged,
            diagnostics,
        },
    })
}
