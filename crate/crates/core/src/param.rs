//! Reduced ("convenience constraint") parametrization.
//!
//! With column `j_dagger` of beta pinned at zero, the free coefficients are
//! stacked column by column, skipping `j_dagger`, into a vector of length
//! `p * (J - 1)`.

use nalgebra::{DMatrix, DVector};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reduced {
    pub p: usize,
    pub n_categories: usize,
    pub j_dagger: usize,
}

impl Reduced {
    pub fn new(p: usize, n_categories: usize, j_dagger: usize) -> Self {
        assert!(j_dagger < n_categories, "j_dagger out of range");
        Self { p, n_categories, j_dagger }
    }

    pub fn dim(&self) -> usize {
        self.p * (self.n_categories - 1)
    }

    /// Position of category `j` among the free columns.
    #[inline]
    pub fn slot(&self, j: usize) -> Option<usize> {
        match j.cmp(&self.j_dagger) {
            std::cmp::Ordering::Less => Some(j),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(j - 1),
        }
    }

    #[inline]
    pub fn index(&self, k: usize, j: usize) -> Option<usize> {
        self.slot(j).map(|s| s * self.p + k)
    }

    pub fn free_categories(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_categories).filter(move |&j| j != self.j_dagger)
    }

    /// Stacks free columns; column `j_dagger` of `beta` is ignored.
    pub fn flatten<T: Scalar>(&self, beta: &DMatrix<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.dim());
        for j in self.free_categories() {
            let s = self.slot(j).unwrap();
            for k in 0..self.p {
                out[s * self.p + k] = beta[(k, j)];
            }
        }
        out
    }

    pub fn unflatten<T: Scalar>(&self, theta: &DVector<T>) -> DMatrix<T> {
        let mut beta = DMatrix::zeros(self.p, self.n_categories);
        for j in self.free_categories() {
            let s = self.slot(j).unwrap();
            for k in 0..self.p {
                beta[(k, j)] = theta[s * self.p + k];
            }
        }
        beta
    }
}

/// Subtracts column `j_dagger` from every column, which keeps beta in its
/// equivalence class while zeroing that column.
pub fn impose_reference_column<T: Scalar>(beta: &mut DMatrix<T>, j_dagger: usize) {
    for k in 0..beta.nrows() {
        let shift = beta[(k, j_dagger)];
        if shift != T::zero() {
            for v in beta.row_mut(k).iter_mut() {
                *v -= shift;
            }
        }
        beta[(k, j_dagger)] = T::zero();
    }
}

/// Category with the most positive observations; ties go to the lowest index.
pub fn choose_j_dagger(detections: &[usize]) -> usize {
    let mut best = 0;
    for (j, &d) in detections.iter().enumerate() {
        if d > detections[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_roundtrip_and_indices() {
        let r = Reduced::new(2, 4, 1);
        assert_eq!(r.dim(), 6);
        assert_eq!(r.index(1, 0), Some(1));
        assert_eq!(r.index(0, 1), None);
        assert_eq!(r.index(0, 3), Some(4));
        let beta = DMatrix::from_fn(2, 4, |k, j| if j == 1 { 0.0 } else { (10 * k + j) as f64 });
        assert_eq!(r.unflatten(&r.flatten(&beta)), beta);
    }

    #[test]
    fn reference_column_is_zeroed_by_row_shifts() {
        let mut beta = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        impose_reference_column(&mut beta, 2);
        assert_eq!(beta, DMatrix::from_row_slice(2, 3, &[-2.0, -1.0, 0.0, -5.0, -3.5, 0.0]));
    }

    #[test]
    fn ties_break_to_lowest_index() {
        assert_eq!(choose_j_dagger(&[3, 5, 5, 1]), 1);
        assert_eq!(choose_j_dagger(&[0, 0]), 0);
    }
}
