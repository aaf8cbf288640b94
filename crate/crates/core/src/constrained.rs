//! Estimation under `H0: beta[k*, j*] = g(beta[k*])` by an augmented
//! Lagrangian with an approximate Newton inner solver.
//!
//! The residual is `r(beta) = g(beta_k*) - beta[k*, j*]` and the objective
//! `-l_Poisson(beta, z; Y_aug) + u r + rho / 2 r^2`, with the augmented counts
//! frozen at the end of the unconstrained penalized fit. The inner solver
//! profiles `z` out in closed form and takes Newton steps in the free
//! coefficients with the approximate Hessian `S + rho v v^T`, where `S` is the
//! multinomial information and `v` the residual gradient.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraint::{
    center_rows, constraint_curvature, evaluate_constraint, CoefficientMatrix, ConstraintCurvature, ConstraintSpec,
};
use crate::data::{CountMatrix, DesignMatrix};
use crate::error::{Error, Result};
use crate::linalg::{max_abs_diff, spd_inverse_or_pinv};
use crate::param::Reduced;
use crate::penalized::likelihood::{
    fitted_probabilities, multinomial_information, multinomial_score, poisson_log_likelihood, profile_z,
};
use crate::penalized::FitState;
use crate::Scalar;

/// Smallest admissible `|1 + rho v^T A^-1 v|` in the rank-one update.
pub const SM_DENOMINATOR_FLOOR: f64 = 1e-12;

/// Entry of beta being tested: row `k_star >= 1`, category `j_star`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConstraintTarget {
    pub k_star: usize,
    pub j_star: usize,
}

impl ConstraintTarget {
    pub fn new(k_star: usize, j_star: usize) -> Self {
        Self { k_star, j_star }
    }

    pub fn validate(&self, p: usize, n_categories: usize) -> Result<()> {
        if self.k_star == 0 {
            return Err(Error::InvalidInput("the intercept row cannot be tested".into()));
        }
        if self.k_star >= p || self.j_star >= n_categories {
            return Err(Error::InvalidInput(format!(
                "target ({}, {}) out of range for a {p} x {n_categories} coefficient matrix",
                self.k_star, self.j_star
            )));
        }
        Ok(())
    }
}

/// How the multiplier estimate is refreshed between outer iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiplierUpdate {
    /// `u <- rho r`: the multiplier is replaced by the latest penalty slope.
    Replace,
    /// `u <- u + rho r`: the classical method-of-multipliers update.
    #[default]
    Accumulate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugLagOptions<T> {
    pub rho0: T,
    /// Grow `rho` when `|r_t| > kappa |r_{t-1}|`.
    pub kappa: T,
    /// Growth factor for `rho`.
    pub tau: T,
    /// Inner stopping tolerance on the gradient norm; `None` means
    /// `1e-6 * sqrt(p J)`.
    pub inner_tol: Option<T>,
    /// Feasibility tolerance on `|r|`.
    pub feasibility_tol: T,
    /// Tolerance on the largest coefficient change between outer iterations.
    pub param_tol: T,
    pub max_outer: usize,
    pub max_inner: usize,
    pub armijo_c: T,
    pub max_halvings: usize,
    /// Largest allowed absolute coefficient change in one Newton step.
    pub max_step: T,
    pub multiplier: MultiplierUpdate,
}

impl<T: Scalar> Default for AugLagOptions<T> {
    fn default() -> Self {
        Self {
            rho0: T::one(),
            kappa: T::lit(0.8),
            tau: T::lit(2.0),
            inner_tol: None,
            feasibility_tol: T::lit(1e-8),
            param_tol: T::lit(1e-6),
            max_outer: 500,
            max_inner: 100,
            armijo_c: T::lit(1e-4),
            max_halvings: 50,
            max_step: T::one(),
            multiplier: MultiplierUpdate::Accumulate,
        }
    }
}

impl<T: Scalar> AugLagOptions<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho0 > T::zero()
            && self.kappa > T::zero()
            && self.kappa < T::one()
            && self.tau > T::one()
            && self.inner_tol.is_none_or(|t| t > T::zero())
            && self.feasibility_tol > T::zero()
            && self.param_tol > T::zero()
            && self.max_outer >= 1
            && self.max_inner >= 1
            && self.armijo_c > T::zero()
            && self.max_step > T::zero();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid augmented Lagrangian options: {self:?}")))
        }
    }

    pub fn inner_tolerance(&self, p: usize, n_categories: usize) -> T {
        self.inner_tol
            .unwrap_or_else(|| T::lit(1e-6) * T::from_count(p * n_categories).sqrt())
    }
}

fn row_of<T: Scalar>(beta: &DMatrix<T>, k: usize) -> Vec<T> {
    beta.row(k).iter().copied().collect()
}

/// Residual `g(beta_k*) - beta[k*, j*]` and its gradient with respect to row `k*`.
pub fn residual<T: Scalar>(beta: &DMatrix<T>, constraint: &ConstraintSpec<T>, target: ConstraintTarget) -> Result<(T, DVector<T>)> {
    let (g, mut grad) = evaluate_constraint(constraint, &row_of(beta, target.k_star))?;
    grad[target.j_star] -= T::one();
    Ok((g - beta[(target.k_star, target.j_star)], grad))
}

/// Augmented Lagrangian `-l_Poisson + u r + rho / 2 r^2` at `(beta, z)`.
#[allow(clippy::too_many_arguments)]
pub fn auglag_value<T: Scalar>(
    beta: &DMatrix<T>,
    z: &DVector<T>,
    rho: T,
    u: T,
    target: ConstraintTarget,
    constraint: &ConstraintSpec<T>,
    augmented_counts: &DMatrix<T>,
    x: &DMatrix<T>,
) -> Result<T> {
    let ll = poisson_log_likelihood(beta, z, augmented_counts, x)?;
    let r = constraint.value(&row_of(beta, target.k_star))? - beta[(target.k_star, target.j_star)];
    Ok(-ll + u * r + rho * T::lit(0.5) * r * r)
}

/// `(A + rho v v^T)^-1 rhs` given a routine applying `A^-1`.
pub fn sherman_morrison_solve<T: Scalar>(
    apply_inverse: impl Fn(&DVector<T>) -> DVector<T>,
    v: &DVector<T>,
    rho: T,
    rhs: &DVector<T>,
) -> Result<DVector<T>> {
    let a_rhs = apply_inverse(rhs);
    if rho == T::zero() || v.iter().all(|&e| e == T::zero()) {
        return Ok(a_rhs);
    }
    let a_v = apply_inverse(v);
    let denominator = T::one() + rho * v.dot(&a_v);
    if !(denominator.abs() >= T::lit(SM_DENOMINATOR_FLOOR)) {
        return Err(Error::IllConditionedUpdate { denominator: denominator.as_f64() });
    }
    let coef = rho * v.dot(&a_rhs) / denominator;
    Ok(a_rhs - a_v * coef)
}

/// Block-diagonal SPD operator with one dense block per category.
#[derive(Debug, Clone)]
pub struct BlockDiagonal<T: Scalar> {
    inverses: Vec<DMatrix<T>>,
    block: usize,
}

impl<T: Scalar> BlockDiagonal<T> {
    /// Stores block inverses; singular blocks fall back to pseudo-inverses.
    pub fn new(blocks: &[DMatrix<T>]) -> Self {
        let block = blocks.first().map_or(0, |b| b.nrows());
        let inverses = blocks.iter().map(|b| spd_inverse_or_pinv(b).0).collect();
        Self { inverses, block }
    }

    pub fn apply_inverse(&self, v: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(v.len());
        for (j, inv) in self.inverses.iter().enumerate() {
            let seg = inv * v.rows(j * self.block, self.block);
            out.rows_mut(j * self.block, self.block).copy_from(&seg);
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AugLagDiagnostics {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Residual before the first outer iteration followed by one entry per outer iteration.
    pub residual_history: Vec<f64>,
    /// `rho` used in each outer iteration.
    pub rho_history: Vec<f64>,
    /// Multiplier used in each outer iteration.
    pub multiplier_history: Vec<f64>,
    /// Outer iterations whose inner solve hit `max_inner`.
    pub inner_cap_hits: usize,
    /// Outer iterations where `rho` growth was suspended.
    pub suspended_growth: usize,
    pub stalled_steps: usize,
    /// Inner steps where the exact Hessian needed a diagonal shift.
    pub shifted_steps: usize,
    /// Inner steps that fell back to the approximate Hessian `S + rho v v^T`.
    pub approximate_steps: usize,
    pub final_gradient_norm: f64,
}

#[derive(Debug, Clone)]
pub struct ConstrainedFit<T: Scalar> {
    /// Centered estimate under the null.
    pub coefficients: CoefficientMatrix<T>,
    /// Estimate in the convenience parametrization of the unconstrained fit.
    pub beta: DMatrix<T>,
    pub z: DVector<T>,
    pub j_dagger: usize,
    pub residual: T,
    pub diagnostics: AugLagDiagnostics,
}

struct Problem<'a, T: Scalar> {
    x: &'a DMatrix<T>,
    y: &'a DMatrix<T>,
    constraint: &'a ConstraintSpec<T>,
    target: ConstraintTarget,
    param: Reduced,
}

/// Gradient of the profiled objective in the reduced coordinates, the
/// reduced constraint direction `v`, and the residual.
struct Linearization<T: Scalar> {
    grad: DVector<T>,
    v: DVector<T>,
    /// Multiplier estimate `u + rho r` weighting the curvature of `g`.
    lambda: T,
    curvature: ConstraintCurvature<T>,
}

impl<T: Scalar> Problem<'_, T> {
    /// Objective with `z` profiled out against the augmented row sums.
    fn objective(&self, beta: &DMatrix<T>, rho: T, u: T) -> Result<T> {
        let z = profile_z(beta, self.y, self.x);
        auglag_value(beta, &z, rho, u, self.target, self.constraint, self.y, self.x)
    }

    fn linearize(&self, beta: &DMatrix<T>, rho: T, u: T) -> Result<Linearization<T>> {
        let score = multinomial_score(beta, self.y, self.x, &self.param);
        let row = row_of(beta, self.target.k_star);
        let curvature = constraint_curvature(self.constraint, &row)?;
        let r = self.constraint.value(&row)? - row[self.target.j_star];
        let mut v = DVector::zeros(self.param.dim());
        for j in self.param.free_categories() {
            let mut e = curvature.gradient[j];
            if j == self.target.j_star {
                e -= T::one();
            }
            v[self.param.index(self.target.k_star, j).unwrap()] = e;
        }
        let lambda = u + rho * r;
        let mut grad = -score;
        grad.axpy(lambda, &v, T::one());
        Ok(Linearization { grad, v, lambda, curvature })
    }

    /// Pieces of the multinomial information `S = A - B D^-1 B^T`: the
    /// per-category blocks of `A`, the coupling `B[(j, k), i] = mu_ij X_ik`
    /// and the row totals `D`.
    fn information_parts(&self, beta: &DMatrix<T>) -> (Vec<DMatrix<T>>, DMatrix<T>, DVector<T>) {
        let probs = fitted_probabilities(beta, self.x);
        let totals = DVector::from_fn(self.y.nrows(), |i, _| self.y.row(i).sum());
        let n = self.x.nrows();
        let p = self.param.p;
        let mut blocks = Vec::with_capacity(self.param.n_categories - 1);
        let mut b = DMatrix::zeros(self.param.dim(), n);
        for j in self.param.free_categories() {
            let s = self.param.slot(j).unwrap();
            let mut a = DMatrix::zeros(p, p);
            for i in 0..n {
                let mu = totals[i] * probs[(i, j)];
                let xi = self.x.row(i).transpose();
                a.ger(mu, &xi, &xi, T::one());
                for k in 0..p {
                    b[(s * p + k, i)] = mu * xi[k];
                }
            }
            blocks.push(a);
        }
        (blocks, b, totals)
    }

    fn dense_information(&self, beta: &DMatrix<T>) -> DMatrix<T> {
        let probs = fitted_probabilities(beta, self.x);
        let totals = DVector::from_fn(self.y.nrows(), |i, _| self.y.row(i).sum());
        multinomial_information(&probs, &totals, self.x, &self.param)
    }

    fn use_dense(&self) -> bool {
        self.param.dim() <= self.x.nrows()
    }

    /// Solves `(S + rho v v^T) d = rhs`, the approximate Newton system that
    /// drops the curvature of `g`. Returns the solution and whether the
    /// rank-one update was ill-conditioned.
    fn approximate_newton(&self, beta: &DMatrix<T>, v: &DVector<T>, rho: T, rhs: &DVector<T>) -> Result<(DVector<T>, bool)> {
        if self.use_dense() {
            let (inv, _) = spd_inverse_or_pinv(&self.dense_information(beta));
            return solve_with_fallback(|w| &inv * w, v, rho, rhs);
        }
        let (blocks, b, totals) = self.information_parts(beta);
        let operator = BlockDiagonal::new(&blocks);
        let mut ill = false;
        let mut m_inv = |w: &DVector<T>| -> Result<DVector<T>> {
            let (d, flag) = solve_with_fallback(|q| operator.apply_inverse(q), v, rho, w)?;
            ill |= flag;
            Ok(d)
        };
        let m_rhs = m_inv(rhs)?;
        let mut m_b = DMatrix::zeros(self.param.dim(), b.ncols());
        for i in 0..b.ncols() {
            m_b.set_column(i, &m_inv(&b.column(i).into_owned())?);
        }
        // Woodbury for the negative rank-n term -B D^-1 B^T.
        let mut schur = DMatrix::from_diagonal(&totals);
        schur -= b.transpose() * &m_b;
        let (schur_inv, _) = spd_inverse_or_pinv(&schur);
        let correction = &m_b * (schur_inv * (b.transpose() * &m_rhs));
        Ok((m_rhs + correction, ill))
    }

    /// Solves the full Newton system `(S + rho v v^T + lambda H_g + sigma I) d = rhs`
    /// with `lambda = u + rho r`, trying the shifts `sigma` in turn (relative
    /// to the mean diagonal of `S`). Returns the first solution that is a
    /// descent direction for `rhs`, and the index of the shift used.
    #[allow(clippy::too_many_arguments)]
    fn exact_newton(
        &self,
        beta: &DMatrix<T>,
        v: &DVector<T>,
        rho: T,
        lambda: T,
        curvature: &ConstraintCurvature<T>,
        rhs: &DVector<T>,
        shifts: &[T],
    ) -> Option<(DVector<T>, usize)> {
        let q = self.param.dim();
        let k = self.target.k_star;
        let mut c = DVector::zeros(q);
        let mut bv = DVector::zeros(q);
        for j in self.param.free_categories() {
            let idx = self.param.index(k, j).unwrap();
            c[idx] = curvature.gradient[j];
            bv[idx] = curvature.b[j];
        }
        let usable = |d: &DVector<T>| d.iter().all(|e| e.is_finite()) && d.dot(rhs) > T::zero();
        if self.use_dense() {
            let mut h = self.dense_information(beta);
            let scale = (h.trace() / T::from_count(q)).max(<T as Scalar>::epsilon());
            h.ger(rho, v, v, T::one());
            let hg = DMatrix::from_diagonal(&bv) - &bv * c.transpose() - &c * bv.transpose() + &c * c.transpose() * curvature.s;
            h += hg * lambda;
            for (attempt, &sigma) in shifts.iter().enumerate() {
                let shifted = &h + DMatrix::identity(q, q) * (sigma * scale);
                if let Some(chol) = shifted.cholesky() {
                    let d = chol.solve(rhs);
                    if usable(&d) {
                        return Some((d, attempt));
                    }
                }
            }
            return None;
        }
        // Block-diagonal part (with the diagonal of H_g) plus the low-rank
        // update U C U^T, U = [v, c, b, B], C = diag(rho, lambda [[s, -1], [-1, 0]], -D^-1).
        let (mut blocks, b, totals) = self.information_parts(beta);
        let p = self.param.p;
        let scale = blocks.iter().map(|blk| blk.trace()).fold(T::zero(), |a, t| a + t) / T::from_count(q);
        let scale = scale.max(<T as Scalar>::epsilon());
        for j in self.param.free_categories() {
            let s = self.param.slot(j).unwrap();
            blocks[s][(k, k)] += lambda * bv[s * p + k];
        }
        shifts.iter().enumerate().find_map(|(attempt, &sigma)| {
            let shifted: Vec<DMatrix<T>> = blocks.iter().map(|blk| blk + DMatrix::identity(p, p) * (sigma * scale)).collect();
            self.woodbury_solve(&shifted, v, &c, &bv, &b, &totals, rho, lambda, curvature.s, rhs)
                .filter(|d| usable(d))
                .map(|d| (d, attempt))
        })
    }

    /// `(blockdiag + U C U^T)^-1 rhs` for the exact Newton system.
    #[allow(clippy::too_many_arguments)]
    fn woodbury_solve(
        &self,
        blocks: &[DMatrix<T>],
        v: &DVector<T>,
        c: &DVector<T>,
        bv: &DVector<T>,
        b: &DMatrix<T>,
        totals: &DVector<T>,
        rho: T,
        lambda: T,
        s: T,
        rhs: &DVector<T>,
    ) -> Option<DVector<T>> {
        let q = self.param.dim();
        let p = self.param.p;
        let mut inverses = Vec::with_capacity(blocks.len());
        for blk in blocks {
            let chol = blk.clone().cholesky()?;
            inverses.push(chol.inverse());
        }
        let apply = |w: &DVector<T>| {
            let mut out = DVector::zeros(q);
            for (s, inv) in inverses.iter().enumerate() {
                out.rows_mut(s * p, p).copy_from(&(inv * w.rows(s * p, p)));
            }
            out
        };
        let n = b.ncols();
        let m = n + 3;
        let mut u_mat = DMatrix::zeros(q, m);
        u_mat.set_column(0, v);
        u_mat.set_column(1, c);
        u_mat.set_column(2, bv);
        u_mat.columns_mut(3, n).copy_from(b);
        let mut cm = DMatrix::zeros(m, m);
        cm[(0, 0)] = rho;
        cm[(1, 1)] = lambda * s;
        cm[(1, 2)] = -lambda;
        cm[(2, 1)] = -lambda;
        for i in 0..n {
            cm[(3 + i, 3 + i)] = -T::one() / totals[i];
        }
        let mut w = DMatrix::zeros(q, m);
        for col in 0..m {
            w.set_column(col, &apply(&u_mat.column(col).into_owned()));
        }
        let m_rhs = apply(rhs);
        let inner = DMatrix::identity(m, m) + u_mat.transpose() * &w * &cm;
        let solved = inner.lu().solve(&(u_mat.transpose() * &m_rhs))?;
        let d = m_rhs - w * (cm * solved);
        d.iter().all(|e| e.is_finite()).then_some(d)
    }
}

fn solve_with_fallback<T: Scalar>(
    apply_inverse: impl Fn(&DVector<T>) -> DVector<T>,
    v: &DVector<T>,
    rho: T,
    rhs: &DVector<T>,
) -> Result<(DVector<T>, bool)> {
    match sherman_morrison_solve(&apply_inverse, v, rho, rhs) {
        Ok(d) => Ok((d, false)),
        Err(Error::IllConditionedUpdate { .. }) => Ok((apply_inverse(rhs), true)),
        Err(e) => Err(e),
    }
}

/// Constrained estimate under `beta[k*, j*] = g(beta_k*)`, started from and
/// using the frozen augmented counts of an unconstrained fit.
pub fn fit_constrained<T: Scalar>(
    counts: &CountMatrix<T>,
    design: &DesignMatrix<T>,
    constraint: &ConstraintSpec<T>,
    target: ConstraintTarget,
    ha_fit: &FitState<T>,
    options: &AugLagOptions<T>,
) -> Result<ConstrainedFit<T>> {
    options.validate()?;
    let x = design.values();
    let y = &ha_fit.augmented_counts;
    let (n, n_cat) = y.shape();
    let p = design.n_covariates();
    if counts.n_samples() != n || counts.n_categories() != n_cat || design.n_samples() != n {
        return Err(Error::DimensionMismatch("fit state does not match the data".into()));
    }
    if ha_fit.beta.shape() != (p, n_cat) {
        return Err(Error::DimensionMismatch("fit state coefficients have the wrong shape".into()));
    }
    constraint.validate(n_cat)?;
    target.validate(p, n_cat)?;

    let j_dagger = ha_fit.j_dagger;
    let param = Reduced::new(p, n_cat, j_dagger);
    let problem = Problem { x, y, constraint, target, param };
    let inner_tol = options.inner_tolerance(p, n_cat);
    let shifts: Vec<T> = [0.0, 1e-6, 1e-4, 1e-2, 1.0, 1e2].iter().map(|&s| T::lit(s)).collect();

    let mut beta = ha_fit.beta.clone();
    let mut z;
    let mut rho = options.rho0;
    let (r0, _) = residual(&beta, constraint, target)?;
    let mut u = options.rho0 * r0;
    let mut previous_r = r0;
    let mut diagnostics = AugLagDiagnostics { residual_history: vec![r0.as_f64()], ..Default::default() };

    for t in 1..=options.max_outer {
        diagnostics.outer_iterations = t;
        diagnostics.rho_history.push(rho.as_f64());
        diagnostics.multiplier_history.push(u.as_f64());
        let start = beta.clone();
        let mut ill_conditioned = false;
        let mut inner_converged = false;

        for inner in 0..options.max_inner {
            let lin = problem.linearize(&beta, rho, u)?;
            let norm = lin.grad.norm();
            diagnostics.final_gradient_norm = norm.as_f64();
            // One step is always taken after a multiplier update so that
            // small changes of u still move beta.
            if norm < inner_tol && (inner > 0 || t == 1) {
                inner_converged = true;
                break;
            }
            diagnostics.inner_iterations += 1;
            let exact = problem.exact_newton(&beta, &lin.v, rho, lin.lambda, &lin.curvature, &lin.grad, &shifts);
            let direction = match exact {
                Some((d, attempt)) => {
                    diagnostics.shifted_steps += (attempt > 0) as usize;
                    -d
                }
                None => {
                    diagnostics.approximate_steps += 1;
                    let (solution, ill) = problem.approximate_newton(&beta, &lin.v, rho, &lin.grad)?;
                    ill_conditioned |= ill;
                    -solution
                }
            };
            let slope = direction.dot(&lin.grad);
            if !(slope < T::zero()) {
                diagnostics.stalled_steps += 1;
                break;
            }
            let theta = param.flatten(&beta);
            let f0 = problem.objective(&beta, rho, u)?;
            // Objective differences below this are rounding noise.
            let noise = T::lit(16.0) * <T as Scalar>::epsilon() * (f0.abs() + T::one());
            let mut alpha = T::one();
            let mut accepted = None;
            for _ in 0..options.max_halvings {
                let trial = param.unflatten(&(&theta + &direction * alpha));
                if let Ok(f1) = problem.objective(&trial, rho, u) {
                    if f1.is_finite() && f1 <= f0 + options.armijo_c * alpha * slope + noise {
                        accepted = Some(alpha);
                        break;
                    }
                }
                alpha *= T::lit(0.5);
            }
            let Some(alpha) = accepted else {
                diagnostics.stalled_steps += 1;
                break;
            };
            let mut step = direction * alpha;
            let largest = step.amax();
            if largest > options.max_step {
                step *= options.max_step / largest;
            }
            beta = param.unflatten(&(theta + step));
        }
        z = profile_z(&beta, y, x);
        if !inner_converged {
            diagnostics.inner_cap_hits += 1;
        }

        let (r, _) = residual(&beta, constraint, target)?;
        diagnostics.residual_history.push(r.as_f64());
        let change = max_abs_diff(&beta, &start);
        if !r.is_finite() || !change.is_finite() {
            break;
        }
        if r.abs() < options.feasibility_tol && change < options.param_tol {
            let coefficients = center_rows(&CoefficientMatrix::new(beta.clone(), *constraint)?)?;
            return Ok(ConstrainedFit { coefficients, beta, z, j_dagger, residual: r, diagnostics });
        }
        u = match options.multiplier {
            MultiplierUpdate::Replace => rho * r,
            MultiplierUpdate::Accumulate => u + rho * r,
        };
        if ill_conditioned {
            diagnostics.suspended_growth += 1;
        } else if r.abs() > options.kappa * previous_r.abs() {
            rho *= options.tau;
        }
        previous_r = r;
    }

    let last = diagnostics.residual_history.last().copied().unwrap_or(f64::NAN);
    Err(Error::Infeasible {
        iterations: diagnostics.outer_iterations,
        last_residual: last,
        residual_history: diagnostics.residual_history,
        beta: beta.iter().map(|v| v.as_f64()).collect(),
    })
}
