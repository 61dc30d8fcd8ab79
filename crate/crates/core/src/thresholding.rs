//! Hard-thresholding projections onto sparsity constraint sets.
//!
//! Every operator keeps the largest-magnitude entries allowed by its pattern
//! and zeroes the rest. Ties on equal magnitude go to the lowest row-major
//! index, so results are deterministic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{OatsError, Result};
use crate::linalg::{Matrix, Real};

/// Shape of the sparsity constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityPattern {
    /// Keep the `k` largest entries of the whole matrix.
    LayerWise(usize),
    /// `k` is the whole-matrix budget; each row keeps `⌊k / rows⌋` entries.
    RowWise(usize),
    /// Keep `n` of every contiguous group of `m` entries along a row.
    #[serde(rename = "n_of_m")]
    NofM { n: usize, m: usize },
}

impl SparsityPattern {
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        match *self {
            SparsityPattern::LayerWise(_) | SparsityPattern::RowWise(_) => Ok(()),
            SparsityPattern::NofM { n, m } => {
                if n == 0 || n > m {
                    return Err(OatsError::Pattern(format!("{n}:{m} needs 0 < n <= m")));
                }
                if !cols.is_multiple_of(m) {
                    return Err(OatsError::Pattern(format!(
                        "{n}:{m} needs columns divisible by {m}, got {cols} (matrix {rows}x{cols})"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Number of entries the pattern keeps on a `rows × cols` matrix.
    pub fn kept(&self, rows: usize, cols: usize) -> usize {
        match *self {
            SparsityPattern::LayerWise(k) => k.min(rows * cols),
            SparsityPattern::RowWise(k) => {
                if rows == 0 {
                    0
                } else {
                    rows * (k / rows).min(cols)
                }
            }
            SparsityPattern::NofM { n, m } => rows * (cols / m) * n,
        }
    }
}

/// Thresholded values together with the support that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix<T> {
    pub values: Matrix<T>,
    pub mask: Vec<bool>,
}

impl<T: Real> MaskedMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            values: Matrix::zeros(rows, cols),
            mask: vec![false; rows * cols],
        }
    }

    /// Number of kept positions (stored entries, including kept zeros).
    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn cast<U: Real>(&self) -> MaskedMatrix<U> {
        MaskedMatrix {
            values: self.values.cast(),
            mask: self.mask.clone(),
        }
    }
}

#[inline]
fn by_magnitude<T: Real>(data: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&i, &j| {
        data[j]
            .abs()
            .as_f64()
            .total_cmp(&data[i].abs().as_f64())
            .then(i.cmp(&j))
    }
}

/// Marks the `k` largest-magnitude entries of `data` (offsets relative to `data`).
fn keep_top_k<T: Real>(data: &[T], k: usize, mask: &mut [bool]) {
    let k = k.min(data.len());
    if k == 0 {
        return;
    }
    if k == data.len() {
        mask.iter_mut().for_each(|b| *b = true);
        return;
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.select_nth_unstable_by(k - 1, by_magnitude(data));
    for &i in &idx[..k] {
        mask[i] = true;
    }
}

/// Support selected by `pattern` on the magnitudes of `scores`.
pub fn threshold_mask<T: Real>(scores: &Matrix<T>, pattern: SparsityPattern) -> Result<Vec<bool>> {
    let (rows, cols) = scores.shape();
    pattern.validate(rows, cols)?;
    let mut mask = vec![false; rows * cols];
    match pattern {
        SparsityPattern::LayerWise(k) => keep_top_k(scores.as_slice(), k, &mut mask),
        SparsityPattern::RowWise(k) => {
            if let Some(per_row) = k.checked_div(rows) {
                for (i, row_mask) in mask.chunks_mut(cols.max(1)).enumerate().take(rows) {
                    keep_top_k(scores.row(i), per_row, row_mask);
                }
            }
        }
        SparsityPattern::NofM { n, m } => {
            for (group, group_mask) in scores.as_slice().chunks(m).zip(mask.chunks_mut(m)) {
                keep_top_k(group, n, group_mask);
            }
        }
    }
    Ok(mask)
}

/// Zeroes every entry of `a` outside `mask`. Kept entries are copied bitwise.
pub fn apply_mask<T: Real>(a: &Matrix<T>, mask: Vec<bool>) -> MaskedMatrix<T> {
    let mut values = a.clone();
    for (v, &keep) in values.as_mut_slice().iter_mut().zip(&mask) {
        if !keep {
            *v = T::zero();
        }
    }
    MaskedMatrix { values, mask }
}

/// Frobenius-nearest matrix to `a` satisfying `pattern`.
pub fn hard_threshold<T: Real>(a: &Matrix<T>, pattern: SparsityPattern) -> Result<MaskedMatrix<T>> {
    a.ensure_finite("hard-threshold input")?;
    let mask = threshold_mask(a, pattern)?;
    Ok(apply_mask(a, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;

    #[test]
    fn layer_wise_keeps_two_largest() {
        let a = DenseMatrix::from_rows(&[&[1.0, -3.0], &[2.0, 0.5]]);
        let s = hard_threshold(&a, SparsityPattern::LayerWise(2)).unwrap();
        assert_eq!(s.values, DenseMatrix::from_rows(&[&[0.0, -3.0], &[2.0, 0.0]]));
        assert_eq!(s.nnz(), 2);
    }

    #[test]
    fn row_wise_differs_from_layer_wise() {
        let a = DenseMatrix::from_rows(&[&[5.0, 4.0], &[1.0, 0.5]]);
        let row = hard_threshold(&a, SparsityPattern::RowWise(2)).unwrap();
        assert_eq!(row.values, DenseMatrix::from_rows(&[&[5.0, 0.0], &[1.0, 0.0]]));
        let layer = hard_threshold(&a, SparsityPattern::LayerWise(2)).unwrap();
        assert_eq!(layer.values, DenseMatrix::from_rows(&[&[5.0, 4.0], &[0.0, 0.0]]));
    }

    #[test]
    fn row_wise_drops_remainder() {
        let a = DenseMatrix::from_fn(3, 4, |i, j| (i * 4 + j + 1) as f32);
        // ⌊5/3⌋ = 1 per row; the two leftover entries are not redistributed.
        let s = hard_threshold(&a, SparsityPattern::RowWise(5)).unwrap();
        assert_eq!(s.nnz(), 3);
        assert_eq!(SparsityPattern::RowWise(5).kept(3, 4), 3);
    }

    #[test]
    fn n_of_m_per_group() {
        let a = DenseMatrix::from_rows(&[&[3.0, -1.0, 0.5, 2.0]]);
        let s = hard_threshold(&a, SparsityPattern::NofM { n: 1, m: 2 }).unwrap();
        assert_eq!(s.values, DenseMatrix::from_rows(&[&[3.0, 0.0, 0.0, 2.0]]));
    }

    #[test]
    fn n_of_m_requires_divisible_columns() {
        let a = DenseMatrix::zeros(2, 6);
        let err = hard_threshold(&a, SparsityPattern::NofM { n: 2, m: 4 });
        assert!(matches!(err, Err(OatsError::Pattern(_))));
        assert!(hard_threshold(&a, SparsityPattern::NofM { n: 0, m: 2 }).is_err());
        assert!(hard_threshold(&a, SparsityPattern::NofM { n: 3, m: 2 }).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let a = DenseMatrix::from_rows(&[&[1.0, -1.0, 1.0, 1.0]]);
        let s = hard_threshold(&a, SparsityPattern::LayerWise(2)).unwrap();
        assert_eq!(s.mask, vec![true, true, false, false]);
        let s = hard_threshold(&a, SparsityPattern::NofM { n: 1, m: 2 }).unwrap();
        assert_eq!(s.mask, vec![true, false, true, false]);
    }

    #[test]
    fn budget_larger_than_matrix_keeps_all() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0]]);
        let s = hard_threshold(&a, SparsityPattern::LayerWise(10)).unwrap();
        assert_eq!(s.values, a);
        let s = hard_threshold(&a, SparsityPattern::RowWise(10)).unwrap();
        assert_eq!(s.values, a);
    }

    #[test]
    fn rejects_nan() {
        let a = DenseMatrix::from_rows(&[&[f32::NAN, 2.0]]);
        assert!(hard_threshold(&a, SparsityPattern::LayerWise(1)).is_err());
    }
}
