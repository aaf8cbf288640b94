//! Validated observation containers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::Scalar;

/// Nonnegative `n x J` outcome matrix (samples by categories).
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix<T: Scalar> {
    values: DMatrix<T>,
    sample_ids: Vec<String>,
    category_ids: Vec<String>,
}

impl<T: Scalar> CountMatrix<T> {
    pub fn new(values: DMatrix<T>, sample_ids: Vec<String>, category_ids: Vec<String>) -> Result<Self> {
        if sample_ids.len() != values.nrows() || category_ids.len() != values.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} counts with {} sample ids and {} category ids",
                values.nrows(),
                values.ncols(),
                sample_ids.len(),
                category_ids.len()
            )));
        }
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidInput("count matrix is empty".into()));
        }
        for i in 0..values.nrows() {
            let mut total = T::zero();
            for j in 0..values.ncols() {
                let v = values[(i, j)];
                if !v.is_finite() || v < T::zero() {
                    return Err(Error::InvalidCount { row: i, col: j, value: v.as_f64() });
                }
                total += v;
            }
            if total <= T::zero() {
                return Err(Error::EmptySample { row: i });
            }
        }
        Ok(Self { values, sample_ids, category_ids })
    }

    /// Builds a count matrix with generated `s{i}` / `c{j}` labels.
    pub fn from_matrix(values: DMatrix<T>) -> Result<Self> {
        let sample_ids = (0..values.nrows()).map(|i| format!("s{i}")).collect();
        let category_ids = (0..values.ncols()).map(|j| format!("c{j}")).collect();
        Self::new(values, sample_ids, category_ids)
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_categories(&self) -> usize {
        self.values.ncols()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn category_ids(&self) -> &[String] {
        &self.category_ids
    }

    pub fn row_sums(&self) -> DVector<T> {
        DVector::from_iterator(self.n_samples(), self.values.row_iter().map(|r| r.sum()))
    }

    /// Number of samples with a positive observation, per category.
    pub fn detections(&self) -> Vec<usize> {
        self.values
            .column_iter()
            .map(|c| c.iter().filter(|&&v| v > T::zero()).count())
            .collect()
    }

    pub fn detection_proportions(&self) -> Vec<f64> {
        let n = self.n_samples() as f64;
        self.detections().into_iter().map(|d| d as f64 / n).collect()
    }

    /// Indices of categories never observed in any sample.
    pub fn zero_columns(&self) -> Vec<usize> {
        self.detections()
            .into_iter()
            .enumerate()
            .filter_map(|(j, d)| (d == 0).then_some(j))
            .collect()
    }

    /// Column permutation; `order[new] = old`.
    pub fn permute_columns(&self, order: &[usize]) -> Result<Self> {
        let values = DMatrix::from_fn(self.n_samples(), order.len(), |i, j| self.values[(i, order[j])]);
        let ids = order.iter().map(|&j| self.category_ids[j].clone()).collect();
        Self::new(values, self.sample_ids.clone(), ids)
    }
}

/// Full-column-rank `n x p` covariate matrix whose first column is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T: Scalar> {
    values: DMatrix<T>,
    column_names: Vec<String>,
}

impl<T: Scalar> DesignMatrix<T> {
    pub fn new(values: DMatrix<T>, column_names: Vec<String>) -> Result<Self> {
        let (n, p) = values.shape();
        if column_names.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{p} design columns with {} names",
                column_names.len()
            )));
        }
        if n == 0 || p == 0 {
            return Err(Error::InvalidInput("design matrix is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("design matrix has non-finite entries".into()));
        }
        if values.column(0).iter().any(|&v| v != T::one()) {
            return Err(Error::MissingIntercept);
        }
        let rank = numerical_rank(&values);
        if rank < p {
            return Err(Error::RankDeficient { rank, cols: p });
        }
        Ok(Self { values, column_names })
    }

    /// Builds a design with generated column names (`(Intercept)`, `x1`, ...).
    pub fn from_matrix(values: DMatrix<T>) -> Result<Self> {
        let names = (0..values.ncols())
            .map(|k| if k == 0 { "(Intercept)".to_string() } else { format!("x{k}") })
            .collect();
        Self::new(values, names)
    }

    /// Intercept plus one indicator column: first `n_first` rows in group 0.
    pub fn two_group(n_first: usize, n_second: usize) -> Result<Self> {
        let n = n_first + n_second;
        let values = DMatrix::from_fn(n, 2, |i, k| {
            if k == 0 || i >= n_first {
                T::one()
            } else {
                T::zero()
            }
        });
        Self::new(values, vec!["(Intercept)".into(), "group".into()])
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_covariates(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }
}

/// Rank from singular values with the usual `max(n, p) * eps * sigma_max` cutoff.
pub fn numerical_rank<T: Scalar>(m: &DMatrix<T>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let cutoff = T::from_count(m.nrows().max(m.ncols())) * <T as Scalar>::epsilon() * smax;
    svd.singular_values.iter().filter(|&&s| s > cutoff).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_negative_and_empty_rows() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 2.0, 3.0]);
        assert_eq!(
            CountMatrix::from_matrix(m).unwrap_err(),
            Error::InvalidCount { row: 0, col: 1, value: -1.0 }
        );
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(CountMatrix::from_matrix(m).unwrap_err(), Error::EmptySample { row: 1 });
        let m = DMatrix::from_row_slice(1, 2, &[f64::NAN, 1.0]);
        assert!(CountMatrix::from_matrix(m).is_err());
    }

    #[test]
    fn zero_columns_are_allowed_and_reported() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 3.0, 0.0, 0.0]);
        let y = CountMatrix::from_matrix(m).unwrap();
        assert_eq!(y.zero_columns(), vec![1]);
        assert_eq!(y.detections(), vec![2, 0, 1]);
        assert_eq!(y.detection_proportions(), vec![1.0, 0.0, 0.5]);
    }

    #[test]
    fn design_requires_intercept_and_full_rank() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 2.0, 1.0]);
        assert_eq!(DesignMatrix::from_matrix(x).unwrap_err(), Error::MissingIntercept);
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 2.0, 1.0, 2.0, 4.0]);
        assert_eq!(
            DesignMatrix::from_matrix(x).unwrap_err(),
            Error::RankDeficient { rank: 2, cols: 3 }
        );
        let d = DesignMatrix::<f64>::two_group(2, 3).unwrap();
        assert_eq!(d.values().column(1).sum(), 3.0);
    }
}
