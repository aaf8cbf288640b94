//! Firth-penalized (bias-reduced) estimation.

pub mod fit;
pub mod hat;
pub mod likelihood;

pub use fit::{fit_unconstrained, scoring_update_column, FitDiagnostics, FitOptions, FitState, UnconstrainedFit};
pub use hat::{augment_counts, hat_diagonals, hat_diagonals_with, HatDiagonals, HatRoute};
