//! Outlier-aware diagonal scaling computed from calibration activations.
//!
//! Weights are decomposed in `W·D` coordinates where `D` holds one scale per
//! input feature, then mapped back with the (clamped) inverse of `D`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OatsError, Result};
use crate::linalg::{DenseMatrix, Matrix, Real};

/// Per-feature sample cap for the robust (median) mode.
pub const RESERVOIR_CAPACITY: usize = 65_536;

const RELATIVE_CLAMP: f64 = 1e-8;
const ABSOLUTE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// `d[j] = √(Σ_b x[b,j]²)`.
    #[default]
    SecondMoment,
    /// `d[j] = median_b |x[b,j]|`.
    RobustMedian,
    /// No scaling.
    Identity,
}

#[derive(Debug, Clone)]
struct Reservoir {
    samples: Vec<Vec<f32>>,
    seen: usize,
    rng: ChaCha8Rng,
}

/// Running activation statistics for one layer input.
#[derive(Debug, Clone)]
pub struct ActivationMoments {
    d_in: usize,
    sum_sq: Vec<f64>,
    count: usize,
    abs_samples: Option<Reservoir>,
}

impl ActivationMoments {
    pub fn new(d_in: usize) -> Self {
        Self {
            d_in,
            sum_sq: vec![0.0; d_in],
            count: 0,
            abs_samples: None,
        }
    }

    /// Also keeps a bounded reservoir of `|x|` samples per feature, needed
    /// for [`ScalingMode::RobustMedian`].
    pub fn with_reservoir(d_in: usize, seed: u64) -> Self {
        let mut m = Self::new(d_in);
        m.abs_samples = Some(Reservoir {
            samples: vec![Vec::new(); d_in],
            seen: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        });
        m
    }

    /// Moments sized for `mode`.
    pub fn for_mode(d_in: usize, mode: ScalingMode, seed: u64) -> Self {
        match mode {
            ScalingMode::RobustMedian => Self::with_reservoir(d_in, seed),
            _ => Self::new(d_in),
        }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sum_sq(&self) -> &[f64] {
        &self.sum_sq
    }

    /// Adds the rows of `x` (`B × d_in`) to the statistics.
    pub fn accumulate(&mut self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.d_in {
            return Err(OatsError::Shape(format!(
                "activations have {} features, moments expect {}",
                x.cols(),
                self.d_in
            )));
        }
        x.ensure_finite("calibration activations")?;
        for b in 0..x.rows() {
            for (acc, &v) in self.sum_sq.iter_mut().zip(x.row(b)) {
                let v = v as f64;
                *acc += v * v;
            }
        }
        if let Some(res) = self.abs_samples.as_mut() {
            for b in 0..x.rows() {
                let row = x.row(b);
                if res.seen < RESERVOIR_CAPACITY {
                    for (s, &v) in res.samples.iter_mut().zip(row) {
                        s.push(v.abs());
                    }
                } else {
                    let slot = res.rng.gen_range(0..=res.seen);
                    if slot < RESERVOIR_CAPACITY {
                        for (s, &v) in res.samples.iter_mut().zip(row) {
                            s[slot] = v.abs();
                        }
                    }
                }
                res.seen += 1;
            }
        }
        self.count += x.rows();
        Ok(())
    }
}

/// The diagonal of `D` and its clamped inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingDiag {
    pub d: Vec<f32>,
    pub d_inv: Vec<f32>,
    pub mode: ScalingMode,
}

impl ScalingDiag {
    pub fn identity(d_in: usize) -> Self {
        Self {
            d: vec![1.0; d_in],
            d_inv: vec![1.0; d_in],
            mode: ScalingMode::Identity,
        }
    }

    /// Builds the diagonal and its inverse. Entries of `d` below
    /// `1e-8 · max(d)` (or `1e-12` when `d` is all zero) are clamped to
    /// that floor before inversion.
    pub fn from_diagonal(d: Vec<f32>, mode: ScalingMode) -> Self {
        let floor = clamp_floor(&d);
        let d_inv = d
            .iter()
            .map(|&v| (1.0 / (v as f64).max(floor)) as f32)
            .collect();
        Self { d, d_inv, mode }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn clamp_floor(&self) -> f64 {
        clamp_floor(&self.d)
    }
}

fn clamp_floor(d: &[f32]) -> f64 {
    let max = d.iter().fold(0.0f64, |m, &v| m.max(v as f64));
    if max > 0.0 {
        RELATIVE_CLAMP * max
    } else {
        ABSOLUTE_CLAMP
    }
}

pub fn build_diag(moments: &ActivationMoments, mode: ScalingMode) -> Result<ScalingDiag> {
    if mode == ScalingMode::Identity {
        return Ok(ScalingDiag::identity(moments.d_in));
    }
    if moments.count == 0 {
        return Err(OatsError::Calibration(
            "no activations accumulated; cannot build scaling".into(),
        ));
    }
    let d = match mode {
        ScalingMode::SecondMoment => moments.sum_sq.iter().map(|s| s.sqrt() as f32).collect(),
        ScalingMode::RobustMedian => {
            let res = moments.abs_samples.as_ref().ok_or_else(|| {
                OatsError::Calibration("robust scaling needs moments built with a reservoir".into())
            })?;
            res.samples.iter().map(|s| lower_median(s)).collect()
        }
        ScalingMode::Identity => unreachable!(),
    };
    Ok(ScalingDiag::from_diagonal(d, mode))
}

/// Lower median (element `⌊(n−1)/2⌋` of the sorted samples).
fn lower_median(samples: &[f32]) -> f32 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut v = samples.to_vec();
    let mid = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f32::total_cmp);
    *m
}

/// Scaling computed directly from one activation matrix.
pub fn diag_from_activations(x: &DenseMatrix, mode: ScalingMode, seed: u64) -> Result<ScalingDiag> {
    let mut m = ActivationMoments::for_mode(x.cols(), mode, seed);
    m.accumulate(x)?;
    build_diag(&m, mode)
}

fn scale_columns<T: Real>(w: &Matrix<T>, factors: &[f32]) -> Result<Matrix<T>> {
    if w.cols() != factors.len() {
        return Err(OatsError::Shape(format!(
            "matrix has {} columns, scaling has {} entries",
            w.cols(),
            factors.len()
        )));
    }
    let factors: Vec<T> = factors.iter().map(|&f| T::from_f64(f as f64)).collect();
    let mut out = w.clone();
    for i in 0..out.rows() {
        for (v, &f) in out.row_mut(i).iter_mut().zip(&factors) {
            *v = *v * f;
        }
    }
    Ok(out)
}

/// `W · D`: column `j` multiplied by `d[j]`.
pub fn scale_weights<T: Real>(w: &Matrix<T>, s: &ScalingDiag) -> Result<Matrix<T>> {
    scale_columns(w, &s.d)
}

/// `M · D⁻¹`: column `j` multiplied by `d_inv[j]`. Zeros stay zero.
pub fn unscale<T: Real>(m: &Matrix<T>, s: &ScalingDiag) -> Result<Matrix<T>> {
    scale_columns(m, &s.d_inv)
}
