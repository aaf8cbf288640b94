//! Diagonal of the Poisson hat matrix for the design `G = [X~ : I_n (x) 1_J]`.
//!
//! The `nJ x nJ` matrix is never formed. Writing `M = G^T V_p G` in blocks
//! (coefficients, scalings), one of the two blocks is eliminated by a Schur
//! complement:
//!
//! * eliminating the scalings leaves the multinomial information `S` of size
//!   `p (J - 1)`, and `h_ij = mu_ij (c_ij^T S^-1 c_ij + 1 / mu_i.)` with
//!   `c_ij = X~_i^T (e_j - p_i)`;
//! * eliminating the coefficients (block diagonal, one `p x p` block per free
//!   category) leaves an `n x n` system.
//!
//! Whichever system is smaller is factorized.

use nalgebra::{DMatrix, DVector};

use crate::linalg::spd_inverse_or_pinv;
use crate::param::Reduced;
use crate::penalized::likelihood::{clamped_exp, multinomial_information};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HatRoute {
    /// Pick the smaller Schur complement.
    Auto,
    /// Eliminate the sample scalings; factorize a `p (J - 1)` system.
    Coefficients,
    /// Eliminate the coefficients; factorize an `n x n` system.
    Samples,
}

#[derive(Debug, Clone)]
pub struct HatDiagonals<T: Scalar> {
    /// `n x J` matrix of `h_ij`, each in `[0, 1]`.
    pub values: DMatrix<T>,
    /// Set when the reduced system was singular and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

fn means<T: Scalar>(beta: &DMatrix<T>, z: &DVector<T>, x: &DMatrix<T>) -> DMatrix<T> {
    let mut mu = x * beta;
    for i in 0..mu.nrows() {
        for v in mu.row_mut(i).iter_mut() {
            *v = clamped_exp(*v + z[i]).0;
        }
    }
    mu
}

/// Hat diagonals at `(beta, z)`; `z` should satisfy the profiling restriction.
pub fn hat_diagonals<T: Scalar>(beta: &DMatrix<T>, z: &DVector<T>, x: &DMatrix<T>, j_dagger: usize) -> HatDiagonals<T> {
    hat_diagonals_with(beta, z, x, j_dagger, HatRoute::Auto)
}

pub fn hat_diagonals_with<T: Scalar>(
    beta: &DMatrix<T>,
    z: &DVector<T>,
    x: &DMatrix<T>,
    j_dagger: usize,
    route: HatRoute,
) -> HatDiagonals<T> {
    let param = Reduced::new(x.ncols(), beta.ncols(), j_dagger);
    let mu = means(beta, z, x);
    let route = match route {
        HatRoute::Auto if param.dim() <= x.nrows() => HatRoute::Coefficients,
        HatRoute::Auto => HatRoute::Samples,
        r => r,
    };
    let mut out = match route {
        HatRoute::Coefficients => via_coefficients(&mu, x, &param),
        _ => via_samples(&mu, x, &param),
    };
    for v in out.values.iter_mut() {
        *v = v.clamp(T::zero(), T::one());
    }
    out
}

fn via_coefficients<T: Scalar>(mu: &DMatrix<T>, x: &DMatrix<T>, param: &Reduced) -> HatDiagonals<T> {
    let (n, n_cat) = mu.shape();
    let p = param.p;
    let totals = DVector::from_fn(n, |i, _| mu.row(i).sum());
    let probs = DMatrix::from_fn(n, n_cat, |i, j| mu[(i, j)] / totals[i]);
    let info = multinomial_information(&probs, &totals, x, param);
    let (inv, pseudo_inverse) = spd_inverse_or_pinv(&info);

    let free = n_cat - 1;
    let mut values = DMatrix::zeros(n, n_cat);
    let mut m = DMatrix::zeros(free, free);
    for i in 0..n {
        let xi = x.row(i).transpose();
        // m[s, t] = X_i^T S^-1[s, t] X_i
        for s in 0..free {
            for t in s..free {
                let blk = inv.view((s * p, t * p), (p, p));
                let v = xi.dot(&(blk * &xi));
                m[(s, t)] = v;
                m[(t, s)] = v;
            }
        }
        let pfree = DVector::from_fn(free, |s, _| {
            let j = if s < param.j_dagger { s } else { s + 1 };
            probs[(i, j)]
        });
        let mp = &m * &pfree;
        let ppp = pfree.dot(&mp);
        for j in 0..n_cat {
            let quad = match param.slot(j) {
                Some(s) => m[(s, s)] - mp[s] * T::lit(2.0) + ppp,
                None => ppp,
            };
            values[(i, j)] = mu[(i, j)] * (quad + T::one() / totals[i]);
        }
    }
    HatDiagonals { values, pseudo_inverse }
}

fn via_samples<T: Scalar>(mu: &DMatrix<T>, x: &DMatrix<T>, param: &Reduced) -> HatDiagonals<T> {
    let (n, n_cat) = mu.shape();
    let p = param.p;
    // K_j = X A_j^-1 X^T with A_j = sum_i mu_ij X_i X_i^T
    let mut kernels: Vec<Option<DMatrix<T>>> = Vec::with_capacity(n_cat);
    let mut pseudo_inverse = false;
    let mut schur = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| mu.row(i).sum()));
    for j in 0..n_cat {
        if j == param.j_dagger {
            kernels.push(None);
            continue;
        }
        let mut a = DMatrix::zeros(p, p);
        for i in 0..n {
            let xi = x.row(i).transpose();
            a.ger(mu[(i, j)], &xi, &xi, T::one());
        }
        let (a_inv, pinv) = spd_inverse_or_pinv(&a);
        pseudo_inverse |= pinv;
        let k = x * a_inv * x.transpose();
        for r in 0..n {
            for c in 0..n {
                schur[(r, c)] -= mu[(r, j)] * k[(r, c)] * mu[(c, j)];
            }
        }
        kernels.push(Some(k));
    }
    let (t_inv, pinv) = spd_inverse_or_pinv(&schur);
    pseudo_inverse |= pinv;

    let mut values = DMatrix::zeros(n, n_cat);
    let mut r = DVector::zeros(n);
    for (j, kernel) in kernels.iter().enumerate() {
        for i in 0..n {
            let direct = match kernel {
                Some(k) => {
                    for a in 0..n {
                        r[a] = mu[(a, j)] * k[(a, i)];
                    }
                    r[i] -= T::one();
                    k[(i, i)]
                }
                None => {
                    r.fill(T::zero());
                    r[i] = -T::one();
                    T::zero()
                }
            };
            values[(i, j)] = mu[(i, j)] * (direct + r.dot(&(&t_inv * &r)));
        }
    }
    HatDiagonals { values, pseudo_inverse }
}

/// Firth data augmentation `y + h / 2`.
pub fn augment_counts<T: Scalar>(y: &DMatrix<T>, h: &DMatrix<T>) -> DMatrix<T> {
    y + h * T::lit(0.5)
}
