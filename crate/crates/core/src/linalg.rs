//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::Scalar;

/// Relative eigenvalue floor for symmetric pseudo-inverses.
pub const PINV_REL_FLOOR: f64 = 1e-12;

/// Result of inverting a symmetric positive semi-definite matrix.
#[derive(Debug, Clone)]
pub struct SymInverse<T: Scalar> {
    pub inverse: DMatrix<T>,
    /// Eigen-directions dropped below the floor (0 means a true inverse).
    pub dropped: usize,
}

/// Moore-Penrose inverse of a symmetric matrix via eigendecomposition,
/// discarding eigenvalues below `rel_floor * max_eigenvalue`.
pub fn sym_pinv<T: Scalar>(m: &DMatrix<T>, rel_floor: T) -> SymInverse<T> {
    let n = m.nrows();
    let sym = (m + m.transpose()) * T::lit(0.5);
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(T::zero(), |a, &b| a.max(b));
    let floor = rel_floor * lmax;
    let mut inverse = DMatrix::zeros(n, n);
    let mut dropped = 0;
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > floor && lambda > T::zero() {
            let v = eig.eigenvectors.column(idx);
            inverse.ger(T::one() / lambda, &v, &v, T::one());
        } else {
            dropped += 1;
        }
    }
    SymInverse { inverse, dropped }
}

/// Solves `m x = rhs` for symmetric positive definite `m` by Cholesky.
pub fn spd_solve<T: Scalar>(m: &DMatrix<T>, rhs: &DVector<T>) -> Option<DVector<T>> {
    let chol = m.clone().cholesky()?;
    let x = chol.solve(rhs);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Inverse of an SPD matrix by Cholesky, falling back to the pseudo-inverse.
/// The boolean reports whether the fallback was used.
pub fn spd_inverse_or_pinv<T: Scalar>(m: &DMatrix<T>) -> (DMatrix<T>, bool) {
    if let Some(chol) = m.clone().cholesky() {
        let diag_min = chol.l_dirty().diagonal().iter().fold(T::max_value().unwrap(), |a, &b| a.min(b));
        let diag_max = chol.l_dirty().diagonal().iter().fold(T::zero(), |a, &b| a.max(b));
        let ratio = diag_min / diag_max;
        if ratio * ratio > T::lit(PINV_REL_FLOOR) {
            let inv = chol.inverse();
            if inv.iter().all(|v| v.is_finite()) {
                return (inv, false);
            }
        }
    }
    (sym_pinv(m, T::lit(PINV_REL_FLOOR)).inverse, true)
}

/// `x^T m x`.
#[inline]
pub fn quad_form<T: Scalar>(m: &DMatrix<T>, x: &DVector<T>) -> T {
    x.dot(&(m * x))
}

/// Largest absolute entry of a matrix difference.
pub fn max_abs_diff<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (&x, &y)| acc.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_drops_null_directions() {
        let v = DVector::from_vec(vec![1.0, 2.0, 2.0]) / 3.0;
        let m = &v * v.transpose() * 4.0;
        let inv = sym_pinv(&m, 1e-12);
        assert_eq!(inv.dropped, 2);
        let expected = &v * v.transpose() * 0.25;
        assert!(max_abs_diff(&inv.inverse, &expected) < 1e-12);
    }

    #[test]
    fn spd_inverse_matches_identity() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (inv, fallback) = spd_inverse_or_pinv(&m);
        assert!(!fallback);
        assert!(max_abs_diff(&(&m * inv), &DMatrix::identity(2, 2)) < 1e-14);
    }
}
