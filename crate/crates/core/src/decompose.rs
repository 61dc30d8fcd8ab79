//! Sparse plus low-rank decomposition by alternating thresholding.
//!
//! Given a (scaled) weight matrix `Wd`, a rank `r` and a sparsity budget,
//! the loop alternates two exact Frobenius projections:
//!
//! ```text
//! S = 0
//! repeat N times:
//!     L = TruncatedSVD(Wd − S, r)
//!     S = HardThreshold(Wd − L, pattern)
//! ```
//!
//! Each half-step minimizes `‖Wd − S − L‖_F²` over one variable with the
//! other fixed, so the recorded objective never increases.

use serde::{Deserialize, Serialize};

use crate::error::{OatsError, Result};
use crate::linalg::{truncated_svd_with, Matrix, Real, SvdMode, SvdTruncation};
use crate::scaling::ScalingDiag;
use crate::thresholding::{apply_mask, hard_threshold, threshold_mask, MaskedMatrix, SparsityPattern};

/// Default iteration count.
pub const DEFAULT_ITERATIONS: usize = 80;

/// Resolved rank and sparsity budget for one matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerBudget {
    pub r: usize,
    pub k: usize,
    pub pattern: SparsityPattern,
}

impl LayerBudget {
    /// Same `(r, k)` with the sparse budget distributed evenly over rows.
    pub fn row_wise(self) -> Self {
        Self {
            pattern: SparsityPattern::RowWise(self.k),
            ..self
        }
    }

    pub fn layer_wise(self) -> Self {
        Self {
            pattern: SparsityPattern::LayerWise(self.k),
            ..self
        }
    }

    /// Sparse entries actually kept on a `d_out × d_in` matrix.
    pub fn sparse_nnz(&self, d_out: usize, d_in: usize) -> usize {
        self.pattern.kept(d_out, d_in)
    }

    /// Parameters stored by the compressed layer.
    pub fn retained(&self, d_out: usize, d_in: usize) -> usize {
        self.sparse_nnz(d_out, d_in) + self.r * (d_out + d_in)
    }

    /// Fraction of parameters removed relative to the dense layer.
    pub fn compression_rate(&self, d_out: usize, d_in: usize) -> f64 {
        1.0 - self.retained(d_out, d_in) as f64 / (d_out * d_in) as f64
    }

    pub fn validate(&self, d_out: usize, d_in: usize) -> Result<()> {
        if self.r > d_out.min(d_in) {
            return Err(OatsError::Budget(format!(
                "rank {} exceeds min dimension of {d_out}x{d_in}",
                self.r
            )));
        }
        self.pattern.validate(d_out, d_in)
    }
}

/// Floor that treats values within 1e-9 below an integer as that integer,
/// absorbing binary rounding of decimal rates like 0.3 or 0.6.
fn floor_count(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

/// Rank and nonzero budget for compression rate `rho` and rank ratio `kappa`:
///
/// `r = ⌊κ(1−ρ)·d_out·d_in/(d_out+d_in)⌋`, `k = ⌊(1−κ)(1−ρ)·d_out·d_in⌋`.
///
/// The returned pattern is layer-wise.
pub fn solve_budget(d_out: usize, d_in: usize, rho: f64, kappa: f64) -> Result<LayerBudget> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(OatsError::Config(format!("compression rate {rho} not in (0, 1)")));
    }
    if !(0.0..1.0).contains(&kappa) {
        return Err(OatsError::Config(format!("rank ratio {kappa} not in [0, 1)")));
    }
    let params = (d_out * d_in) as f64;
    let r = if d_out + d_in == 0 {
        0
    } else {
        floor_count(kappa * (1.0 - rho) * params / (d_out + d_in) as f64)
    };
    let k = floor_count((1.0 - kappa) * (1.0 - rho) * params);
    Ok(LayerBudget {
        r: r.min(d_out.min(d_in)),
        k,
        pattern: SparsityPattern::LayerWise(k),
    })
}

/// Budget for an `n:m` sparse term plus a low-rank term holding fraction
/// `kappa` of the retained parameters:
///
/// `r = ⌊κ/(1−κ) · (n/m) · d_out·d_in/(d_out+d_in)⌋`.
pub fn budget_for_nm(d_out: usize, d_in: usize, n: usize, m: usize, kappa: f64) -> Result<LayerBudget> {
    let pattern = SparsityPattern::NofM { n, m };
    pattern.validate(d_out, d_in)?;
    if !(0.0..1.0).contains(&kappa) {
        return Err(OatsError::Config(format!("rank ratio {kappa} not in [0, 1)")));
    }
    let k = d_out * d_in / m * n;
    let r = floor_count(
        kappa / (1.0 - kappa) * (n as f64 / m as f64) * (d_out * d_in) as f64
            / (d_out + d_in) as f64,
    );
    Ok(LayerBudget {
        r: r.min(d_out.min(d_in)),
        k,
        pattern,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdOrder {
    /// Low-rank projection first, then hard thresholding.
    #[default]
    SvdFirst,
    HardThresholdFirst,
}

/// Whether the sparse support is chosen in scaled or original coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SparseStepScaling {
    #[default]
    Scaled,
    /// Support chosen from `(Wd − L)·D⁻¹`; kept entries stay in scaled
    /// coordinates for the next low-rank step.
    Unscaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    pub iterations: usize,
    pub order: ThresholdOrder,
    pub sparse_step_scaling: SparseStepScaling,
    pub svd_mode: SvdMode,
    /// Stop once the relative objective change falls below this value.
    pub tolerance: Option<f64>,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            order: ThresholdOrder::SvdFirst,
            sparse_step_scaling: SparseStepScaling::Scaled,
            svd_mode: SvdMode::Exact,
            tolerance: None,
        }
    }
}

impl DecomposeOptions {
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_order(mut self, order: ThresholdOrder) -> Self {
        self.order = order;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult<T> {
    pub sparse: MaskedMatrix<T>,
    pub low_rank: SvdTruncation<T>,
    /// `‖Wd − S − L‖_F²` after each iteration.
    pub objective_trace: Vec<f64>,
}

impl<T: Real> DecompositionResult<T> {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn iterations(&self) -> usize {
        self.objective_trace.len()
    }

    /// `S + L` as a dense matrix.
    pub fn materialize(&self) -> Matrix<T> {
        self.sparse
            .values
            .add(&self.low_rank.reconstruct())
            .expect("factors share the decomposed shape")
    }
}

/// Decomposes `wd` into a sparse term and a rank-`budget.r` term.
pub fn alternating_thresholding<T: Real>(
    wd: &Matrix<T>,
    budget: &LayerBudget,
    opts: &DecomposeOptions,
) -> Result<DecompositionResult<T>> {
    run(wd, budget, opts, None, None)
}

/// Like [`alternating_thresholding`], with access to the scaling used to
/// form `wd`. Required for [`SparseStepScaling::Unscaled`].
pub fn alternating_thresholding_scaled<T: Real>(
    wd: &Matrix<T>,
    budget: &LayerBudget,
    opts: &DecomposeOptions,
    scaling: &ScalingDiag,
) -> Result<DecompositionResult<T>> {
    run(wd, budget, opts, Some(scaling), None)
}

/// Continues the loop for `opts.iterations` more iterations from `previous`.
pub fn resume<T: Real>(
    wd: &Matrix<T>,
    budget: &LayerBudget,
    opts: &DecomposeOptions,
    previous: &DecompositionResult<T>,
) -> Result<DecompositionResult<T>> {
    run(wd, budget, opts, None, Some(previous))
}

fn run<T: Real>(
    wd: &Matrix<T>,
    budget: &LayerBudget,
    opts: &DecomposeOptions,
    scaling: Option<&ScalingDiag>,
    init: Option<&DecompositionResult<T>>,
) -> Result<DecompositionResult<T>> {
    let (rows, cols) = wd.shape();
    if opts.iterations == 0 {
        return Err(OatsError::Config("iterations must be at least 1".into()));
    }
    budget.validate(rows, cols)?;
    wd.ensure_finite("decomposition input")?;
    if opts.sparse_step_scaling == SparseStepScaling::Unscaled {
        match scaling {
            None => {
                return Err(OatsError::Config(
                    "unscaled sparse step needs the scaling diagonal".into(),
                ))
            }
            Some(s) if s.len() != cols => {
                return Err(OatsError::Shape(format!(
                    "scaling has {} entries for {cols} columns",
                    s.len()
                )))
            }
            _ => {}
        }
    }

    let sparse_step = |residual: &Matrix<T>| -> Result<MaskedMatrix<T>> {
        match (opts.sparse_step_scaling, scaling) {
            (SparseStepScaling::Unscaled, Some(s)) => {
                let scores = crate::scaling::unscale(residual, s)?;
                let mask = threshold_mask(&scores, budget.pattern)?;
                Ok(apply_mask(residual, mask))
            }
            _ => hard_threshold(residual, budget.pattern),
        }
    };
    let low_rank_step = |target: &Matrix<T>| -> Result<SvdTruncation<T>> {
        if budget.r == 0 {
            Ok(SvdTruncation::empty(rows, cols))
        } else {
            truncated_svd_with(target, budget.r, opts.svd_mode)
        }
    };

    let (mut sparse, mut low_rank) = match init {
        Some(prev) => (prev.sparse.clone(), prev.low_rank.clone()),
        None => (MaskedMatrix::zeros(rows, cols), SvdTruncation::empty(rows, cols)),
    };
    let mut low_dense = low_rank.reconstruct();
    let mut trace = Vec::with_capacity(opts.iterations);

    for _ in 0..opts.iterations {
        match opts.order {
            ThresholdOrder::SvdFirst => {
                low_rank = low_rank_step(&wd.sub(&sparse.values)?)?;
                low_dense = low_rank.reconstruct();
                sparse = sparse_step(&wd.sub(&low_dense)?)?;
            }
            ThresholdOrder::HardThresholdFirst => {
                sparse = sparse_step(&wd.sub(&low_dense)?)?;
                low_rank = low_rank_step(&wd.sub(&sparse.values)?)?;
                low_dense = low_rank.reconstruct();
            }
        }
        let obj = objective(wd, &sparse.values, &low_dense);
        let prev = trace.last().copied();
        trace.push(obj);
        if let (Some(tol), Some(prev)) = (opts.tolerance, prev) {
            if (prev - obj).abs() <= tol * prev.max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }

    Ok(DecompositionResult {
        sparse,
        low_rank,
        objective_trace: trace,
    })
}

/// `‖wd − sparse − low‖_F²` accumulated in `f64`.
pub fn objective<T: Real>(wd: &Matrix<T>, sparse: &Matrix<T>, low: &Matrix<T>) -> f64 {
    wd.as_slice()
        .iter()
        .zip(sparse.as_slice())
        .zip(low.as_slice())
        .map(|((&w, &s), &l)| {
            let d = w.as_f64() - s.as_f64() - l.as_f64();
            d * d
        })
        .sum()
}
