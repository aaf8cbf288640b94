//! Fold-change estimation for multivariate counts observed up to unknown
//! sample- and category-specific scalings.

pub mod constrained;
pub mod constraint;
pub mod data;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod param;
pub mod penalized;
pub mod scalar;
pub mod sim;

pub use constrained::{fit_constrained, AugLagOptions, ConstrainedFit, ConstraintTarget};
pub use constraint::{center_rows, evaluate_constraint, pseudo_huber_center, pseudo_huber_gradient, CoefficientMatrix, ConstraintSpec};
pub use data::{CountMatrix, DesignMatrix};
pub use error::{Error, Result};
pub use inference::{bh_adjust, robust_score_test, robust_wald_test, wald_confidence_interval, TestKind, TestResult};
pub use param::Reduced;
pub use penalized::{fit_unconstrained, FitOptions, UnconstrainedFit};
pub use scalar::Scalar;
pub use sim::{generate_beta, run_replications, simulate_counts, CountDistribution, Hypothesis, ReplicationReport, ReplicationSettings, SimDesign, TestSet, ZPolicy};

pub type CountMatrixF64 = CountMatrix<f64>;
pub type DesignMatrixF64 = DesignMatrix<f64>;
pub type ConstraintSpecF64 = ConstraintSpec<f64>;
pub type CoefficientMatrixF64 = CoefficientMatrix<f64>;
pub type FitOptionsF64 = FitOptions<f64>;
pub type AugLagOptionsF64 = AugLagOptions<f64>;
pub type UnconstrainedFitF64 = UnconstrainedFit<f64>;
pub type ConstrainedFitF64 = ConstrainedFit<f64>;
