//! Poisson and profile (multinomial) likelihood pieces.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::param::Reduced;
use crate::Scalar;

/// Largest linear predictor passed to `exp`; about 700 for `f64`.
pub fn exp_limit<T: Scalar>() -> T {
    T::max_value().expect("bounded float").ln().floor() - T::lit(9.0)
}

/// `exp` with the argument clamped to `+-exp_limit`. Returns whether clamping happened.
#[inline]
pub fn clamped_exp<T: Scalar>(x: T) -> (T, bool) {
    let lim = exp_limit::<T>();
    if x > lim {
        (lim.exp(), true)
    } else if x < -lim {
        ((-lim).exp(), true)
    } else {
        (x.exp(), false)
    }
}

fn log_sum_exp<T: Scalar>(v: impl Iterator<Item = T> + Clone) -> T {
    let m = v.clone().fold(T::min_value().expect("bounded float"), |a, b| a.max(b));
    let s = v.fold(T::zero(), |a, b| a + (b - m).exp());
    m + s.ln()
}

/// Closed-form maximizer of the Poisson likelihood in `z` for fixed `beta`:
/// `z_i = log sum_j y_ij - log sum_j exp(X_i beta^j)`.
///
/// `y` may be any nonnegative matrix with positive row sums (original or
/// augmented counts).
pub fn profile_z<T: Scalar>(beta: &DMatrix<T>, y: &DMatrix<T>, x: &DMatrix<T>) -> DVector<T> {
    let eta = x * beta;
    DVector::from_fn(y.nrows(), |i, _| {
        let total = y.row(i).sum();
        total.ln() - log_sum_exp(eta.row(i).iter().copied())
    })
}

/// `sum_ij [y_ij (X_i beta^j + z_i) - exp(X_i beta^j + z_i)]` (no factorial term).
pub fn poisson_log_likelihood<T: Scalar>(
    beta: &DMatrix<T>,
    z: &DVector<T>,
    y: &DMatrix<T>,
    x: &DMatrix<T>,
) -> Result<T> {
    let eta = x * beta;
    let mut total = T::zero();
    for j in 0..y.ncols() {
        for i in 0..y.nrows() {
            let lin = eta[(i, j)] + z[i];
            let term = y[(i, j)] * lin - lin.exp();
            if !term.is_finite() {
                return Err(Error::NumericOverflow { row: i, col: j });
            }
            total += term;
        }
    }
    Ok(total)
}

/// Row-wise softmax of `X beta`.
pub fn fitted_probabilities<T: Scalar>(beta: &DMatrix<T>, x: &DMatrix<T>) -> DMatrix<T> {
    let mut eta = x * beta;
    for mut row in eta.row_iter_mut() {
        let m = row.iter().fold(T::min_value().unwrap(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row /= s;
    }
    eta
}

/// Profile log likelihood `sum_ij y_ij log p_ij - sum_i y_i.`; the Poisson
/// likelihood at `z = profile_z(beta)` up to a constant in `beta`.
pub fn profile_log_likelihood<T: Scalar>(beta: &DMatrix<T>, y: &DMatrix<T>, x: &DMatrix<T>) -> T {
    let eta = x * beta;
    let mut total = T::zero();
    for i in 0..y.nrows() {
        let lse = log_sum_exp(eta.row(i).iter().copied());
        let mut row_total = T::zero();
        for j in 0..y.ncols() {
            let yij = y[(i, j)];
            if yij > T::zero() {
                total += yij * (eta[(i, j)] - lse);
            }
            row_total += yij;
        }
        total -= row_total;
    }
    total
}

/// Multinomial information `X~^T V X~` in the reduced parametrization, where
/// block `i` of `V` is `totals_i (diag(p_i) - p_i p_i^T)`.
pub fn multinomial_information<T: Scalar>(
    probs: &DMatrix<T>,
    totals: &DVector<T>,
    x: &DMatrix<T>,
    param: &Reduced,
) -> DMatrix<T> {
    let q = param.dim();
    let p = param.p;
    let mut info = DMatrix::zeros(q, q);
    let mut outer = DMatrix::zeros(p, p);
    for i in 0..x.nrows() {
        let xi = x.row(i).transpose();
        outer.fill(T::zero());
        outer.ger(T::one(), &xi, &xi, T::zero());
        for a in param.free_categories() {
            let sa = param.slot(a).unwrap();
            let pa = probs[(i, a)];
            for b in param.free_categories() {
                let sb = param.slot(b).unwrap();
                if sb < sa {
                    continue;
                }
                let pb = probs[(i, b)];
                let mut w = -pa * pb;
                if a == b {
                    w += pa;
                }
                w *= totals[i];
                let mut blk = info.view_mut((sa * p, sb * p), (p, p));
                blk += &outer * w;
            }
        }
    }
    // mirror the upper block triangle
    for sa in 0..param.n_categories - 1 {
        for sb in 0..sa {
            let blk = info.view((sb * p, sa * p), (p, p)).transpose();
            info.view_mut((sa * p, sb * p), (p, p)).copy_from(&blk);
        }
    }
    info
}

/// Multinomial score `sum_i X~_i^T (y_i - y_i. p_i)` in the reduced parametrization.
pub fn multinomial_score<T: Scalar>(beta: &DMatrix<T>, y: &DMatrix<T>, x: &DMatrix<T>, param: &Reduced) -> DVector<T> {
    let probs = fitted_probabilities(beta, x);
    let mut score = DVector::zeros(param.dim());
    for i in 0..y.nrows() {
        let total = y.row(i).sum();
        for j in param.free_categories() {
            let resid = y[(i, j)] - total * probs[(i, j)];
            let s = param.slot(j).unwrap();
            for k in 0..param.p {
                score[s * param.p + k] += x[(i, k)] * resid;
            }
        }
    }
    score
}

/// `l_profile + 1/2 log |X~^T V X~|`, the Firth-penalized profile likelihood.
/// Returns `None` if the information is not positive definite.
pub fn penalized_log_likelihood<T: Scalar>(
    beta: &DMatrix<T>,
    y: &DMatrix<T>,
    x: &DMatrix<T>,
    param: &Reduced,
) -> Option<T> {
    let probs = fitted_probabilities(beta, x);
    let totals = DVector::from_fn(y.nrows(), |i, _| y.row(i).sum());
    let info = multinomial_information(&probs, &totals, x, param);
    let chol = info.cholesky()?;
    let logdet = chol.l_dirty().diagonal().iter().fold(T::zero(), |a, &d| a + d.ln()) * T::lit(2.0);
    Some(profile_log_likelihood(beta, y, x) + logdet * T::lit(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn instance() -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 0.5, 1.0, -1.0]);
        let y = DMatrix::from_row_slice(4, 3, &[3.0, 0.0, 5.0, 1.0, 2.0, 7.0, 4.0, 4.0, 0.0, 2.0, 9.0, 1.0]);
        let beta = DMatrix::from_row_slice(2, 3, &[0.3, -0.2, 0.0, 1.1, 0.4, 0.0]);
        (x, y, beta)
    }

    #[test]
    fn profile_z_at_zero_beta() {
        let (x, y, _) = instance();
        let z = profile_z(&DMatrix::zeros(2, 3), &y, &x);
        for i in 0..4 {
            assert_relative_eq!(z[i], (y.row(i).sum() / 3.0).ln(), epsilon = 1e-14);
        }
    }

    #[test]
    fn profile_z_matches_row_sums() {
        let (x, y, beta) = instance();
        let z = profile_z(&beta, &y, &x);
        let eta = &x * &beta;
        for i in 0..4 {
            let fitted: f64 = (0..3).map(|j| (eta[(i, j)] + z[i]).exp()).sum();
            let total = y.row(i).sum();
            assert!((fitted - total).abs() <= 1e-10 * total);
        }
    }

    #[test]
    fn profile_z_shift_bookkeeping() {
        let (x, y, beta) = instance();
        let alpha = DVector::from_vec(vec![0.7, -1.3]);
        let shifted = &beta + &alpha * DMatrix::from_element(1, 3, 1.0);
        let z0 = profile_z(&beta, &y, &x);
        let z1 = profile_z(&shifted, &y, &x);
        let xa = &x * &alpha;
        for i in 0..4 {
            assert_relative_eq!(z1[i], z0[i] - xa[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn poisson_likelihood_special_cases() {
        let x = DMatrix::from_element(1, 1, 1.0);
        let v = poisson_log_likelihood(&DMatrix::zeros(1, 1), &DVector::zeros(1), &DMatrix::from_element(1, 1, 2.0), &x)
            .unwrap();
        assert_eq!(v, -1.0);

        let (x, _, beta) = instance();
        let z = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
        let zero = DMatrix::zeros(4, 3);
        let eta = &x * &beta;
        let expected: f64 = -(0..4).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| (eta[(i, j)] + z[i]).exp()).sum::<f64>();
        assert_relative_eq!(poisson_log_likelihood(&beta, &z, &zero, &x).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn poisson_likelihood_equivalence_class_invariance() {
        let (x, y, beta) = instance();
        let z = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
        let alpha = DVector::from_vec(vec![0.4, 2.0]);
        let shifted = &beta + &alpha * DMatrix::from_element(1, 3, 1.0);
        let z_shift = &z - &x * &alpha;
        assert_relative_eq!(
            poisson_log_likelihood(&beta, &z, &y, &x).unwrap(),
            poisson_log_likelihood(&shifted, &z_shift, &y, &x).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn overflow_is_reported_with_position() {
        let x = DMatrix::from_element(1, 1, 1.0);
        let beta = DMatrix::from_row_slice(1, 2, &[0.0, 1e4]);
        let err = poisson_log_likelihood(&beta, &DVector::zeros(1), &DMatrix::from_element(1, 2, 1.0), &x).unwrap_err();
        assert_eq!(err, Error::NumericOverflow { row: 0, col: 1 });
    }

    #[test]
    fn fitted_probabilities_examples() {
        let x = DMatrix::from_element(1, 1, 1.0);
        let p = fitted_probabilities(&DMatrix::from_row_slice(1, 2, &[0.0, 3f64.ln()]), &x);
        assert_relative_eq!(p[(0, 0)], 0.25, epsilon = 1e-15);
        assert_relative_eq!(p[(0, 1)], 0.75, epsilon = 1e-15);
        let (x, _, beta) = instance();
        let p0 = fitted_probabilities(&DMatrix::zeros(2, 3), &x);
        assert!(p0.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p1 = fitted_probabilities(&beta, &x);
        let p2 = fitted_probabilities(&beta.map(|v| v + 2.5), &x);
        for i in 0..4 {
            assert!((p1.row(i).sum() - 1.0).abs() < 1e-12);
        }
        assert!(crate::linalg::max_abs_diff(&p1, &p2) < 1e-14);
    }

    #[test]
    fn information_blocks_are_psd() {
        let (x, y, beta) = instance();
        let param = Reduced::new(2, 3, 2);
        let probs = fitted_probabilities(&beta, &x);
        let totals = DVector::from_fn(4, |i, _| y.row(i).sum());
        let info = multinomial_information(&probs, &totals, &x, &param);
        assert!(crate::linalg::max_abs_diff(&info, &info.transpose()) < 1e-12);
        for i in 0..4 {
            let pi = probs.row(i).transpose();
            let block = (DMatrix::from_diagonal(&pi) - &pi * pi.transpose()) * totals[i];
            let min_eig = block.symmetric_eigen().eigenvalues.min();
            assert!(min_eig >= -1e-10);
        }
        assert!(info.symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn score_is_gradient_of_profile_likelihood() {
        let (x, y, beta) = instance();
        let param = Reduced::new(2, 3, 2);
        let score = multinomial_score(&beta, &y, &x, &param);
        let theta = param.flatten(&beta);
        let h = 1e-6;
        for idx in 0..param.dim() {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[idx] += h;
            dn[idx] -= h;
            let fd = (profile_log_likelihood(&param.unflatten(&up), &y, &x)
                - profile_log_likelihood(&param.unflatten(&dn), &y, &x))
                / (2.0 * h);
            assert_relative_eq!(score[idx], fd, max_relative = 1e-6);
        }
    }
}
