//! With no low-rank budget the compressed layer equals activation-weighted
//! magnitude pruning, bit for bit.

use oats::fixtures::{activations_with_outliers, rng, gaussian_f32};
use oats::pipeline::{compress_layer, CompressionPlan, PatternKind};
use oats::scaling::{diag_from_activations, scale_weights, unscale, ScalingMode};
use oats::tensor_store::Dtype;
use oats::thresholding::{hard_threshold, SparsityPattern};

pub fn run_example() -> oats::Result<bool> {
    let w = gaussian_f32(24, 32, &mut rng(3));
    let x = activations_with_outliers(128, 32, 2, 15.0, 4);
    let diag = diag_from_activations(&x, ScalingMode::SecondMoment, 0)?;
    let plan = CompressionPlan::new(0.5, 0.0).with_pattern(PatternKind::RowWise);
    let (layer, report) = compress_layer("fc", &w, None, &diag, &plan, Dtype::F32)?;

    let pruned = hard_threshold(&scale_weights(&w, &diag)?, SparsityPattern::RowWise(report.k))?;
    let expected = unscale(&pruned.values, &diag)?;
    let got = layer.materialize();
    let identical = got
        .as_slice()
        .iter()
        .zip(expected.as_slice())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!("rank {}, kept {} of {}, bitwise identical: {identical}", layer.rank(), layer.nnz(), 24 * 32);
    Ok(identical)
}

#[allow(dead_code)]
fn main() -> oats::Result<()> {
    run_example().map(|_| ())
}
