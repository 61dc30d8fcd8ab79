//! Dense matrix kernels used by the decomposition.

mod matrix;
mod svd;

pub use matrix::{dot, frob_dist_sq, frob_norm_sq, DenseMatrix, Matrix, Real};
pub use svd::{truncated_svd, truncated_svd_with, SvdMode, SvdTruncation};

/// Materializes a truncation; see [`SvdTruncation::reconstruct`].
pub fn reconstruct<T: Real>(t: &SvdTruncation<T>) -> Matrix<T> {
    t.reconstruct()
}
