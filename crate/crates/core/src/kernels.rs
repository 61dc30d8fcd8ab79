//! CPU apply kernels for dense, CSR, N:M and sparse plus low-rank layers.
//!
//! Every kernel computes `Y = X · Wᵀ` for a batch `X` of shape `B × d_in`,
//! producing `B × d_out`. The `*_par` variants split the output features
//! across the current rayon pool.

use rayon::prelude::*;

use crate::error::{OatsError, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::thresholding::{threshold_mask, MaskedMatrix, SparsityPattern};

fn check_input(x: &DenseMatrix, d_in: usize) -> Result<()> {
    if x.cols() != d_in {
        return Err(OatsError::Shape(format!(
            "input has {} features, layer expects {d_in}",
            x.cols()
        )));
    }
    Ok(())
}

/// Assembles `B × d_out` output from per-feature columns.
fn from_columns(batch: usize, columns: Vec<Vec<f32>>) -> DenseMatrix {
    let d_out = columns.len();
    let mut y = DenseMatrix::zeros(batch, d_out);
    for (i, col) in columns.into_iter().enumerate() {
        for (b, v) in col.into_iter().enumerate() {
            y[(b, i)] = v;
        }
    }
    y
}

/// Dense reference kernel.
pub fn dense_apply(w: &DenseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    x.matmul_t(w)
}

pub fn dense_apply_par(w: &DenseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    check_input(x, w.cols())?;
    let cols: Vec<Vec<f32>> = (0..w.rows())
        .into_par_iter()
        .map(|i| (0..x.rows()).map(|b| dot(x.row(b), w.row(i))).collect())
        .collect();
    Ok(from_columns(x.rows(), cols))
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f32>,
}

impl CsrMatrix {
    /// Validates and wraps raw CSR arrays. Column indices must be strictly
    /// increasing within each row.
    pub fn new(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(OatsError::Shape(format!("invalid CSR: {msg}")));
        if indptr.len() != rows + 1 {
            return bad(format!("indptr has {} entries for {rows} rows", indptr.len()));
        }
        if indptr[0] != 0 {
            return bad("indptr must start at 0".into());
        }
        if indices.len() != values.len() || indptr[rows] != indices.len() {
            return bad(format!(
                "indptr ends at {} with {} indices and {} values",
                indptr[rows],
                indices.len(),
                values.len()
            ));
        }
        for i in 0..rows {
            let (lo, hi) = (indptr[i], indptr[i + 1]);
            if lo > hi {
                return bad(format!("indptr decreases at row {i}"));
            }
            let row = &indices[lo..hi];
            if row.iter().any(|&j| j >= cols) {
                return bad(format!("row {i} has a column index >= {cols}"));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("row {i} indices not strictly increasing"));
            }
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Stores every masked position of `m`, including kept zeros.
    pub fn from_masked(m: &MaskedMatrix<f32>) -> Self {
        let (rows, cols) = m.values.shape();
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..rows {
            for j in 0..cols {
                if m.mask[i * cols + j] {
                    indices.push(j);
                    values.push(m.values[(i, j)]);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    /// Stores the nonzero entries of a dense matrix.
    pub fn from_dense(w: &DenseMatrix) -> Self {
        let mask = w.as_slice().iter().map(|&v| v != 0.0).collect();
        Self::from_masked(&MaskedMatrix {
            values: w.clone(),
            mask,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                out[(i, self.indices[p])] = self.values[p];
            }
        }
        out
    }

    #[inline]
    fn row_dot(&self, i: usize, x: &[f32]) -> f32 {
        let mut acc = 0.0f32;
        for p in self.indptr[i]..self.indptr[i + 1] {
            acc += self.values[p] * x[self.indices[p]];
        }
        acc
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        check_input(x, self.cols)?;
        let mut y = DenseMatrix::zeros(x.rows(), self.rows);
        for b in 0..x.rows() {
            let xb = x.row(b);
            let yb = y.row_mut(b);
            for (i, out) in yb.iter_mut().enumerate() {
                *out = self.row_dot(i, xb);
            }
        }
        Ok(y)
    }

    pub fn apply_par(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        check_input(x, self.cols)?;
        let cols: Vec<Vec<f32>> = (0..self.rows)
            .into_par_iter()
            .map(|i| (0..x.rows()).map(|b| self.row_dot(i, x.row(b))).collect())
            .collect();
        Ok(from_columns(x.rows(), cols))
    }
}

/// N:M structured sparse matrix: each group of `m` consecutive entries of a
/// row stores exactly `n` values with their in-group offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct NmMatrix {
    rows: usize,
    cols: usize,
    n: usize,
    m: usize,
    values: Vec<f32>,
    offsets: Vec<u8>,
}

impl NmMatrix {
    /// Prunes `w` to `n:m` by magnitude and packs the survivors.
    pub fn from_dense(w: &DenseMatrix, n: usize, m: usize) -> Result<Self> {
        if m > u8::MAX as usize + 1 {
            return Err(OatsError::Pattern(format!("group size {m} too large")));
        }
        let mask = threshold_mask(w, SparsityPattern::NofM { n, m })?;
        let (rows, cols) = w.shape();
        let mut values = Vec::with_capacity(rows * cols / m * n);
        let mut offsets = Vec::with_capacity(values.capacity());
        for (g, group_mask) in mask.chunks(m).enumerate() {
            for (o, &keep) in group_mask.iter().enumerate() {
                if keep {
                    values.push(w.as_slice()[g * m + o]);
                    offsets.push(o as u8);
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            n,
            m,
            values,
            offsets,
        })
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        let groups = self.rows * self.cols / self.m;
        for g in 0..groups {
            for s in 0..self.n {
                let p = g * self.n + s;
                out.as_mut_slice()[g * self.m + self.offsets[p] as usize] = self.values[p];
            }
        }
        out
    }

    #[inline]
    fn row_dot(&self, i: usize, x: &[f32]) -> f32 {
        let groups_per_row = self.cols / self.m;
        let base = i * groups_per_row * self.n;
        let mut acc = 0.0f32;
        for g in 0..groups_per_row {
            let xg = &x[g * self.m..(g + 1) * self.m];
            for s in 0..self.n {
                let p = base + g * self.n + s;
                acc += self.values[p] * xg[self.offsets[p] as usize];
            }
        }
        acc
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        check_input(x, self.cols)?;
        let mut y = DenseMatrix::zeros(x.rows(), self.rows);
        for b in 0..x.rows() {
            let xb = x.row(b);
            for (i, out) in y.row_mut(b).iter_mut().enumerate() {
                *out = self.row_dot(i, xb);
            }
        }
        Ok(y)
    }
}

/// Sparse term plus `U · SVt` low-rank term.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLowRank {
    pub sparse: CsrMatrix,
    /// `d_out × r`.
    pub u: DenseMatrix,
    /// `r × d_in`.
    pub svt: DenseMatrix,
}

impl SparseLowRank {
    pub fn new(sparse: CsrMatrix, u: DenseMatrix, svt: DenseMatrix) -> Result<Self> {
        if u.rows() != sparse.rows() || svt.cols() != sparse.cols() || u.cols() != svt.rows() {
            return Err(OatsError::Shape(format!(
                "sparse {}x{}, U {}x{}, SVt {}x{} do not compose",
                sparse.rows(),
                sparse.cols(),
                u.rows(),
                u.cols(),
                svt.rows(),
                svt.cols()
            )));
        }
        Ok(Self { sparse, u, svt })
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn d_out(&self) -> usize {
        self.sparse.rows()
    }

    pub fn d_in(&self) -> usize {
        self.sparse.cols()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = self.sparse.to_dense();
        if self.rank() > 0 {
            let low = self.u.matmul(&self.svt).expect("factor shapes checked");
            out = out.add(&low).expect("same shape");
        }
        out
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut y = self.sparse.apply(x)?;
        if self.rank() > 0 {
            let t = x.matmul_t(&self.svt)?;
            let low = t.matmul_t(&self.u)?;
            for (o, l) in y.as_mut_slice().iter_mut().zip(low.as_slice()) {
                *o += *l;
            }
        }
        Ok(y)
    }

    pub fn apply_par(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        check_input(x, self.d_in())?;
        let t = x.matmul_t(&self.svt)?;
        let cols: Vec<Vec<f32>> = (0..self.d_out())
            .into_par_iter()
            .map(|i| {
                (0..x.rows())
                    .map(|b| self.sparse.row_dot(i, x.row(b)) + dot(t.row(b), self.u.row(i)))
                    .collect()
            })
            .collect();
        Ok(from_columns(x.rows(), cols))
    }
}

/// `‖a − b‖_F / ‖b‖_F`, with `b` the reference.
pub fn relative_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let num = crate::linalg::frob_dist_sq(a, b).sqrt();
    let den = crate::linalg::frob_norm_sq(b).sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_x() -> DenseMatrix {
        DenseMatrix::from_fn(3, 4, |b, j| (b as f32 + 1.0) * 0.5 - j as f32 * 0.25)
    }

    #[test]
    fn identity_csr_returns_input() {
        let csr = CsrMatrix::from_dense(&DenseMatrix::identity(4));
        let layer = SparseLowRank::new(csr, DenseMatrix::zeros(4, 0), DenseMatrix::zeros(0, 4)).unwrap();
        let x = sample_x();
        assert_eq!(layer.apply(&x).unwrap(), x);
        assert_eq!(layer.apply_par(&x).unwrap(), x);
    }

    #[test]
    fn rank_one_outer_product() {
        let u = DenseMatrix::from_rows(&[&[1.0], &[2.0]]);
        let vt = DenseMatrix::from_rows(&[&[0.5, -1.0, 0.0, 2.0]]);
        let csr = CsrMatrix::from_dense(&DenseMatrix::zeros(2, 4));
        let layer = SparseLowRank::new(csr, u, vt.clone()).unwrap();
        let x = sample_x();
        let y = layer.apply(&x).unwrap();
        for b in 0..3 {
            let xv = dot(x.row(b), vt.row(0));
            assert!((y[(b, 0)] - xv).abs() < 1e-6);
            assert!((y[(b, 1)] - 2.0 * xv).abs() < 1e-6);
        }
    }

    #[test]
    fn csr_validation() {
        assert!(CsrMatrix::new(2, 2, vec![0, 1], vec![0], vec![1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(CsrMatrix::new(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 2], vec![0, 1], vec![1.0, 1.0]).is_ok());
    }

    #[test]
    fn nm_kernel_matches_dense() {
        let w = DenseMatrix::from_fn(3, 8, |i, j| ((i * 8 + j) as f32 * 0.37).sin());
        let nm = NmMatrix::from_dense(&w, 2, 4).unwrap();
        assert_eq!(nm.nnz(), 12);
        let x = DenseMatrix::from_fn(2, 8, |b, j| (b + j) as f32 * 0.1);
        let want = dense_apply(&nm.to_dense(), &x).unwrap();
        assert!(relative_error(&nm.apply(&x).unwrap(), &want) < 1e-6);
    }

    #[test]
    fn shape_errors() {
        let csr = CsrMatrix::from_dense(&DenseMatrix::identity(3));
        assert!(csr.apply(&DenseMatrix::zeros(1, 2)).is_err());
        assert!(SparseLowRank::new(csr, DenseMatrix::zeros(3, 1), DenseMatrix::zeros(2, 3)).is_err());
    }
}
