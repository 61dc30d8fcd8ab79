//! Synthetic weights and activations with known structure, used by the
//! examples, tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{DenseMatrix, Matrix};
use crate::pipeline::{Activation, Block, LayerSpec, ModelGraph};
use crate::tensor_store::{NamedTensor, TensorArchive};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_f32(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// A matrix that is exactly low-rank plus sparse, with both parts kept.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub low_rank: Matrix<f64>,
    pub sparse: Matrix<f64>,
    pub rank: usize,
    pub spikes: usize,
}

impl PlantedInstance {
    pub fn matrix(&self) -> Matrix<f64> {
        self.low_rank.add(&self.sparse).expect("parts share a shape")
    }
}

/// Rank-`rank` Gaussian product plus `spikes` entries of magnitude 5 to 10 at
/// distinct random positions.
pub fn planted(rows: usize, cols: usize, rank: usize, spikes: usize, seed: u64) -> PlantedInstance {
    let mut rng = rng(seed);
    let a = gaussian(rows, rank, &mut rng);
    let b = gaussian(rank, cols, &mut rng);
    let low_rank = a.matmul(&b).expect("inner dimensions agree");
    let mut sparse = Matrix::zeros(rows, cols);
    let positions = rand::seq::index::sample(&mut rng, rows * cols, spikes.min(rows * cols));
    for p in positions.iter() {
        let mag: f64 = rng.gen_range(5.0..10.0);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        sparse.as_mut_slice()[p] = sign * mag;
    }
    PlantedInstance {
        low_rank,
        sparse,
        rank,
        spikes,
    }
}

/// `U·diag(σ)·Vᵀ` with orthonormal random factors and `σ` uniform in
/// `[1, 2]`, plus `spikes` entries of magnitude `spike` with random signs.
pub fn planted_orthogonal(
    rows: usize,
    cols: usize,
    rank: usize,
    spikes: usize,
    spike: f64,
    seed: u64,
) -> PlantedInstance {
    let mut rng = rng(seed);
    let u = orthonormal_columns(rows, rank, &mut rng);
    let v = orthonormal_columns(cols, rank, &mut rng);
    let sigma: Vec<f64> = (0..rank).map(|_| rng.gen_range(1.0..=2.0)).collect();
    let low_rank = Matrix::from_fn(rows, cols, |i, j| {
        (0..rank).map(|t| u[(i, t)] * sigma[t] * v[(j, t)]).sum()
    });
    let mut sparse = Matrix::zeros(rows, cols);
    for p in rand::seq::index::sample(&mut rng, rows * cols, spikes.min(rows * cols)).iter() {
        sparse.as_mut_slice()[p] = if rng.gen_bool(0.5) { spike } else { -spike };
    }
    PlantedInstance {
        low_rank,
        sparse,
        rank,
        spikes,
    }
}

/// Gram–Schmidt orthonormalization of a Gaussian `n × k` matrix.
fn orthonormal_columns(n: usize, k: usize, rng: &mut impl Rng) -> Matrix<f64> {
    let mut q = gaussian(n, k, rng);
    for c in 0..k {
        for prev in 0..c {
            let d: f64 = (0..n).map(|i| q[(i, c)] * q[(i, prev)]).sum();
            for i in 0..n {
                let p = q[(i, prev)];
                q[(i, c)] -= d * p;
            }
        }
        let norm = (0..n).map(|i| q[(i, c)] * q[(i, c)]).sum::<f64>().sqrt();
        for i in 0..n {
            q[(i, c)] /= norm;
        }
    }
    q
}

/// Layer weight resembling a trained projection: a low-rank component, a few
/// large entries, and dense noise.
pub fn structured_weight(d_out: usize, d_in: usize, seed: u64) -> DenseMatrix {
    let rank = (d_out.min(d_in) / 8).max(1);
    let p = planted(d_out, d_in, rank, d_out * d_in / 64, seed);
    let mut rng = rng(seed ^ 0x5eed);
    let noise = gaussian(d_out, d_in, &mut rng);
    let scale = 1.0 / (d_in as f64).sqrt();
    Matrix::from_fn(d_out, d_in, |i, j| {
        ((p.low_rank[(i, j)] * 0.5 + p.sparse[(i, j)] * 0.3 + noise[(i, j)] * 0.2) * scale) as f32
    })
}

/// Gaussian activations with a handful of outlier feature columns scaled up
/// by `outlier_gain`.
pub fn activations_with_outliers(
    batch: usize,
    d_in: usize,
    outliers: usize,
    outlier_gain: f32,
    seed: u64,
) -> DenseMatrix {
    let mut rng = rng(seed);
    let cols: Vec<usize> = rand::seq::index::sample(&mut rng, d_in, outliers.min(d_in)).into_vec();
    let mut x = gaussian_f32(batch, d_in, &mut rng);
    for i in 0..batch {
        for &j in &cols {
            x[(i, j)] *= outlier_gain;
        }
    }
    x
}

pub const TOY_INPUT_DIM: usize = 32;
pub const TOY_HIDDEN_DIM: usize = 64;
pub const TOY_BATCH: usize = 512;

/// A two-block MLP with weights, biases and calibration inputs.
#[derive(Debug, Clone)]
pub struct ToyMlp {
    pub graph: ModelGraph,
    pub weights: TensorArchive,
    pub calib: TensorArchive,
}

impl ToyMlp {
    pub fn input(&self) -> DenseMatrix {
        DenseMatrix::from_tensor(self.calib.require("input").expect("fixture has input"))
            .expect("fixture input is 2-D")
    }
}

/// `32 → 64 (relu) → 32`, plus an unreferenced embedding table that must
/// survive compression untouched.
pub fn toy_mlp(seed: u64) -> ToyMlp {
    let graph = ModelGraph {
        blocks: vec![
            Block {
                name: Some("blocks.0".into()),
                layers: vec![LayerSpec::new("blocks.0.up", TOY_HIDDEN_DIM, TOY_INPUT_DIM)
                    .with_bias("blocks.0.up.bias")],
                activation: Activation::Relu,
                residual: false,
            },
            Block {
                name: Some("blocks.1".into()),
                layers: vec![LayerSpec::new("blocks.1.down", TOY_INPUT_DIM, TOY_HIDDEN_DIM)],
                activation: Activation::Identity,
                residual: false,
            },
        ],
    };
    let mut weights = TensorArchive::new();
    let mut rng = rng(seed ^ 0xb1a5);
    let embed = gaussian_f32(8, TOY_INPUT_DIM, &mut rng);
    weights.insert(embed.to_tensor("embed_tokens.weight")).unwrap();
    let up = structured_weight(TOY_HIDDEN_DIM, TOY_INPUT_DIM, seed);
    weights.insert(up.to_tensor("blocks.0.up.weight")).unwrap();
    let bias: Vec<f32> = (0..TOY_HIDDEN_DIM).map(|_| rng.gen_range(-0.1..0.1)).collect();
    weights
        .insert(NamedTensor::from_f32("blocks.0.up.bias", vec![TOY_HIDDEN_DIM], &bias).unwrap())
        .unwrap();
    let down = structured_weight(TOY_INPUT_DIM, TOY_HIDDEN_DIM, seed.wrapping_add(1));
    weights.insert(down.to_tensor("blocks.1.down.weight")).unwrap();
    weights.metadata.insert("model".into(), "toy-mlp".into());

    let x = activations_with_outliers(TOY_BATCH, TOY_INPUT_DIM, 3, 20.0, seed.wrapping_add(2));
    let mut calib = TensorArchive::new();
    calib.insert(x.to_tensor("input")).unwrap();
    ToyMlp {
        graph,
        weights,
        calib,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_parts_have_requested_structure() {
        let p = planted(12, 10, 2, 7, 1);
        assert_eq!(p.sparse.as_slice().iter().filter(|v| **v != 0.0).count(), 7);
        let svd = crate::linalg::truncated_svd(&p.low_rank, 3).unwrap();
        assert!(svd.singular_values[2] < 1e-9 * svd.singular_values[0]);
    }

    #[test]
    fn orthogonal_planting_has_spectrum_in_range() {
        let p = planted_orthogonal(16, 16, 2, 8, 5.0, 3);
        let svd = crate::linalg::truncated_svd(&p.low_rank, 3).unwrap();
        let s = &svd.singular_values;
        assert!(s[0] <= 2.0 + 1e-12 && s[1] >= 1.0 - 1e-12 && s[2] < 1e-12);
        assert!(p.sparse.as_slice().iter().all(|v| *v == 0.0 || v.abs() == 5.0));
    }

    #[test]
    fn toy_mlp_is_consistent() {
        let t = toy_mlp(0);
        t.graph.validate_weights(&t.weights).unwrap();
        assert_eq!(t.input().shape(), (TOY_BATCH, TOY_INPUT_DIM));
        assert_eq!(toy_mlp(0).weights, t.weights);
    }
}
