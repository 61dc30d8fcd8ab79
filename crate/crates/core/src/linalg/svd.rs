//! Truncated singular value decomposition.
//!
//! The exact path is a one-sided (Hestenes) Jacobi SVD carried out in `f64`
//! along the smaller matrix dimension. The randomized path builds a range
//! basis with a Gaussian sketch and power iterations, then runs the exact
//! solver on the projected matrix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix, Real};
use crate::error::{OatsError, Result};

const MAX_SWEEPS: usize = 80;
const ROTATION_TOL: f64 = 1e-15;

/// Which SVD algorithm backs the low-rank projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SvdMode {
    #[default]
    Exact,
    /// Range finder with `oversample` extra sketch columns and
    /// `power_iters` subspace iterations. Approximate.
    Randomized {
        oversample: usize,
        power_iters: usize,
        seed: u64,
    },
}

impl SvdMode {
    pub fn randomized(seed: u64) -> Self {
        SvdMode::Randomized {
            oversample: 10,
            power_iters: 2,
            seed,
        }
    }
}

/// Top-`r` singular triplets: `A ≈ U · diag(σ) · Vt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdTruncation<T> {
    pub u: Matrix<T>,
    pub singular_values: Vec<T>,
    pub vt: Matrix<T>,
}

impl<T: Real> SvdTruncation<T> {
    /// The empty truncation of an `m × n` matrix, representing zero.
    pub fn empty(m: usize, n: usize) -> Self {
        Self {
            u: Matrix::zeros(m, 0),
            singular_values: Vec::new(),
            vt: Matrix::zeros(0, n),
        }
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `(rows, cols)` of the represented matrix.
    pub fn shape(&self) -> (usize, usize) {
        (self.u.rows(), self.vt.cols())
    }

    /// Materializes `U · diag(σ) · Vt`.
    pub fn reconstruct(&self) -> Matrix<T> {
        let (m, n) = self.shape();
        let mut out = Matrix::zeros(m, n);
        let r = self.rank();
        for i in 0..m {
            let out_row = out.row_mut(i);
            for k in 0..r {
                let coeff = self.u[(i, k)] * self.singular_values[k];
                if coeff == T::zero() {
                    continue;
                }
                for (o, &v) in out_row.iter_mut().zip(self.vt.row(k)) {
                    *o += coeff * v;
                }
            }
        }
        out
    }

    /// `diag(σ) · Vt`, the right factor stored by compressed layers.
    pub fn scaled_vt(&self) -> Matrix<T> {
        let mut out = self.vt.clone();
        for (k, &s) in self.singular_values.iter().enumerate() {
            for v in out.row_mut(k) {
                *v = *v * s;
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> SvdTruncation<U> {
        SvdTruncation {
            u: self.u.cast(),
            singular_values: self
                .singular_values
                .iter()
                .map(|v| U::from_f64(v.as_f64()))
                .collect(),
            vt: self.vt.cast(),
        }
    }
}

/// Exact truncated SVD keeping the `r` largest singular triplets.
pub fn truncated_svd<T: Real>(a: &Matrix<T>, r: usize) -> Result<SvdTruncation<T>> {
    truncated_svd_with(a, r, SvdMode::Exact)
}

pub fn truncated_svd_with<T: Real>(
    a: &Matrix<T>,
    r: usize,
    mode: SvdMode,
) -> Result<SvdTruncation<T>> {
    let (m, n) = a.shape();
    if r > m.min(n) {
        return Err(OatsError::Budget(format!(
            "rank {r} exceeds min dimension of {m}x{n}"
        )));
    }
    a.ensure_finite("SVD input")?;
    if r == 0 {
        return Ok(SvdTruncation::empty(m, n));
    }
    let a64: Matrix<f64> = a.cast();
    let full = match mode {
        SvdMode::Exact => jacobi_svd(&a64, r),
        SvdMode::Randomized {
            oversample,
            power_iters,
            seed,
        } => randomized_svd(&a64, r, oversample, power_iters, seed),
    };
    Ok(full.cast())
}

/// Thin SVD via one-sided Jacobi, truncated to `keep` triplets and sign-normalized.
pub(crate) fn jacobi_svd(a: &Matrix<f64>, keep: usize) -> SvdTruncation<f64> {
    let (m, n) = a.shape();
    if m < n {
        let t = jacobi_svd(&a.transpose(), keep);
        let mut out = SvdTruncation {
            u: t.vt.transpose(),
            singular_values: t.singular_values,
            vt: t.u.transpose(),
        };
        normalize_signs(&mut out);
        return out;
    }

    // Columns of A stored as contiguous rows.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[(i, j)]).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for (&x, &y) in cp.iter().zip(cq) {
                        al += x * x;
                        be += y * y;
                        ga += x * y;
                    }
                    (al, be, ga)
                };
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    order.truncate(keep);

    let k = order.len();
    let mut u = Matrix::<f64>::zeros(m, k);
    let mut vt = Matrix::<f64>::zeros(k, n);
    let mut sigma = Vec::with_capacity(k);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (slot, &j) in order.iter().enumerate() {
        let s = norms[j];
        let ucol = if s > 0.0 && s.is_normal() {
            cols[j].iter().map(|v| v / s).collect()
        } else {
            complete_basis(&basis, m)
        };
        for (i, &v) in ucol.iter().enumerate() {
            u[(i, slot)] = v;
        }
        vt.row_mut(slot).copy_from_slice(&vcols[j]);
        sigma.push(if s.is_normal() { s } else { 0.0 });
        basis.push(ucol);
    }
    let mut out = SvdTruncation {
        u,
        singular_values: sigma,
        vt,
    };
    normalize_signs(&mut out);
    out
}

fn rotate_pair(vs: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = vs.split_at_mut(q);
    let (vp, vq) = (&mut head[p], &mut tail[0]);
    for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// A unit vector orthogonal to every vector in `basis`.
fn complete_basis(basis: &[Vec<f64>], m: usize) -> Vec<f64> {
    for e in 0..m {
        let mut v = vec![0.0; m];
        v[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
    vec![0.0; m]
}

/// Makes the first clearly nonzero entry of every `U` column non-negative.
fn normalize_signs(t: &mut SvdTruncation<f64>) {
    let (m, _) = t.shape();
    for k in 0..t.rank() {
        let first = (0..m).map(|i| t.u[(i, k)]).find(|v| v.abs() > 1e-10);
        if matches!(first, Some(v) if v < 0.0) {
            for i in 0..m {
                t.u[(i, k)] = -t.u[(i, k)];
            }
            for v in t.vt.row_mut(k) {
                *v = -*v;
            }
        }
    }
}

fn randomized_svd(
    a: &Matrix<f64>,
    r: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> SvdTruncation<f64> {
    let (m, n) = a.shape();
    let width = r + oversample;
    if width >= m.min(n) {
        return jacobi_svd(a, r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Matrix::<f64>::from_fn(n, width, |_, _| StandardNormal.sample(&mut rng));
    let at = a.transpose();

    let mut q = orthonormal_columns(&a.matmul(&omega).expect("shapes agree"));
    for _ in 0..power_iters {
        let z = orthonormal_columns(&at.matmul(&q).expect("shapes agree"));
        q = orthonormal_columns(&a.matmul(&z).expect("shapes agree"));
    }
    if q.cols() < r {
        return jacobi_svd(a, r);
    }
    // B = Qᵀ A is (width × n); its SVD lifts back through Q.
    let b = q.transpose().matmul(a).expect("shapes agree");
    let small = jacobi_svd(&b, r);
    let mut out = SvdTruncation {
        u: q.matmul(&small.u).expect("shapes agree"),
        singular_values: small.singular_values,
        vt: small.vt,
    };
    normalize_signs(&mut out);
    out
}

/// Orthonormal basis for the column space via twice-iterated modified
/// Gram–Schmidt. Columns that collapse numerically are dropped.
fn orthonormal_columns(y: &Matrix<f64>) -> Matrix<f64> {
    let (m, k) = y.shape();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut v: Vec<f64> = (0..m).map(|i| y[(i, j)]).collect();
        let original = dot(&v, &v).sqrt();
        for _ in 0..2 {
            for b in &basis {
                let proj = dot(&v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-10 * original.max(f64::MIN_POSITIVE) {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    Matrix::from_fn(m, basis.len(), |i, j| basis[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frob_dist_sq, DenseMatrix};

    #[test]
    fn diag_rank_one() {
        let a = DenseMatrix::diag(&[3.0, 1.0]);
        let t = truncated_svd(&a, 1).unwrap();
        assert_eq!(t.singular_values.len(), 1);
        assert!((t.singular_values[0] - 3.0).abs() < 1e-6);
        let rec = t.reconstruct();
        assert!(frob_dist_sq(&rec, &DenseMatrix::diag(&[3.0, 0.0])) < 1e-10);
    }

    #[test]
    fn zero_rank_is_zero_matrix() {
        let a = DenseMatrix::from_fn(4, 3, |i, j| (i + j) as f32);
        let t = truncated_svd(&a, 0).unwrap();
        assert_eq!(t.rank(), 0);
        assert_eq!(t.reconstruct(), DenseMatrix::zeros(4, 3));
    }

    #[test]
    fn full_rank_reconstructs() {
        let a = DenseMatrix::diag(&[3.0, 1.0]);
        let rec = truncated_svd(&a, 2).unwrap().reconstruct();
        assert!(frob_dist_sq(&rec, &a).sqrt() < 1e-5);
    }

    #[test]
    fn rejects_bad_rank_and_nan() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(truncated_svd(&a, 3).is_err());
        let mut b = DenseMatrix::zeros(2, 2);
        b[(0, 1)] = f32::NAN;
        assert!(matches!(truncated_svd(&b, 1), Err(OatsError::NonFinite(_))));
    }

    #[test]
    fn zero_matrix_still_orthonormal() {
        let a = DenseMatrix::zeros(5, 3);
        let t = truncated_svd(&a, 3).unwrap();
        let gram = t.u.transpose().matmul(&t.u).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - want).abs() < 1e-6);
            }
        }
        assert!(t.singular_values.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn sign_convention_holds() {
        let a = DenseMatrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f32 - 2.0);
        let t = truncated_svd(&a, 3).unwrap();
        for k in 0..3 {
            let first = (0..6).map(|i| t.u[(i, k)]).find(|v| v.abs() > 1e-6).unwrap();
            assert!(first > 0.0);
        }
    }
}
