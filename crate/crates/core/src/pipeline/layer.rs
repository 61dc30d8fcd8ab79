use crate::decompose::DecompositionResult;
use crate::error::{OatsError, Result};
use crate::kernels::{CsrMatrix, SparseLowRank};
use crate::linalg::{DenseMatrix, Matrix};
use crate::pipeline::graph::add_bias;
use crate::scaling::ScalingDiag;
use crate::tensor_store::{Dtype, NamedTensor};
use crate::thresholding::MaskedMatrix;

/// Deployable replacement for one dense linear layer:
/// `y = x·(S·D⁻¹)ᵀ + (x·SVtᵀ)·Uᵀ + b`, with `SVt = Σ_r V_rᵀ D⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLowRankLayer {
    pub name: String,
    /// Storage dtype of the floating tensors.
    pub dtype: Dtype,
    pub factors: SparseLowRank,
    pub bias: Option<Vec<f32>>,
}

impl SparseLowRankLayer {
    pub fn new(
        name: impl Into<String>,
        dtype: Dtype,
        factors: SparseLowRank,
        bias: Option<Vec<f32>>,
    ) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != factors.d_out() {
                return Err(OatsError::Shape(format!(
                    "bias has {} entries for {} outputs",
                    b.len(),
                    factors.d_out()
                )));
            }
        }
        if !dtype.is_float() {
            return Err(OatsError::Config(format!("layer dtype must be floating, got {dtype}")));
        }
        let mut layer = Self {
            name: name.into(),
            dtype,
            factors,
            bias,
        };
        layer.round_to_dtype();
        Ok(layer)
    }

    /// Builds the layer from a decomposition of `W·D`, mapping both terms
    /// back through `D⁻¹`.
    pub fn from_decomposition(
        name: impl Into<String>,
        result: &DecompositionResult<f64>,
        diag: &ScalingDiag,
        bias: Option<Vec<f32>>,
        dtype: Dtype,
    ) -> Result<Self> {
        let sparse: MaskedMatrix<f32> = result.sparse.cast();
        let sparse = MaskedMatrix {
            values: crate::scaling::unscale(&sparse.values, diag)?,
            mask: sparse.mask,
        };
        let csr = CsrMatrix::from_masked(&sparse);
        let u: DenseMatrix = result.low_rank.u.cast();
        let svt: Matrix<f64> = result.low_rank.scaled_vt();
        let svt: DenseMatrix = Matrix::<f64>::from_fn(svt.rows(), svt.cols(), |k, j| {
            svt[(k, j)] * diag.d_inv[j] as f64
        })
        .cast();
        Self::new(name, dtype, SparseLowRank::new(csr, u, svt)?, bias)
    }

    /// Rounds the stored values through `dtype` so the in-memory layer equals
    /// what an artifact round-trip yields.
    fn round_to_dtype(&mut self) {
        if self.dtype == Dtype::F32 {
            return;
        }
        let round = |vals: &mut [f32], dtype: Dtype| {
            let t = NamedTensor::from_f32_as("r", dtype, vec![vals.len()], vals)
                .expect("float dtype");
            vals.copy_from_slice(&t.f32_values().expect("float dtype"));
        };
        round(self.factors.sparse.values_mut(), self.dtype);
        round(self.factors.u.as_mut_slice(), self.dtype);
        round(self.factors.svt.as_mut_slice(), self.dtype);
        if let Some(b) = self.bias.as_mut() {
            round(b, self.dtype);
        }
    }

    pub fn d_out(&self) -> usize {
        self.factors.d_out()
    }

    pub fn d_in(&self) -> usize {
        self.factors.d_in()
    }

    pub fn rank(&self) -> usize {
        self.factors.rank()
    }

    pub fn nnz(&self) -> usize {
        self.factors.sparse.nnz()
    }

    /// Parameters stored by the sparse and low-rank terms (bias excluded).
    pub fn retained_params(&self) -> usize {
        self.nnz() + self.rank() * (self.d_out() + self.d_in())
    }

    pub fn achieved_rho(&self) -> f64 {
        1.0 - self.retained_params() as f64 / (self.d_out() * self.d_in()) as f64
    }

    /// Dense `(S + L)·D⁻¹`.
    pub fn materialize(&self) -> DenseMatrix {
        self.factors.to_dense()
    }

    /// Applies the layer to a batch `x` of shape `B × d_in`.
    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut y = self.factors.apply(x)?;
        if let Some(b) = &self.bias {
            add_bias(&mut y, b);
        }
        Ok(y)
    }

    /// Applies the layer without the bias term.
    pub fn apply_weight(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.factors.apply(x)
    }

    /// Single-vector form of [`apply`](Self::apply).
    pub fn apply_vec(&self, x: &[f32]) -> Result<Vec<f32>> {
        let m = DenseMatrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.apply(&m)?.into_vec())
    }
}

/// Applies a compressed layer; see [`SparseLowRankLayer::apply`].
pub fn apply_compressed(layer: &SparseLowRankLayer, x: &DenseMatrix) -> Result<DenseMatrix> {
    layer.apply(x)
}
