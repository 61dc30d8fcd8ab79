//! Compares activation scaling and sparsity granularity on the toy MLP.
//!
//! Each arm compresses both layers at 50% and reports the relative error of
//! the network output on the calibration batch.

use oats::fixtures::toy_mlp;
use oats::kernels::relative_error;
use oats::pipeline::{compress_model, compressed_forward, dense_forward, CompressionPlan, PatternKind};
use oats::scaling::ScalingMode;

#[derive(Debug, Clone)]
pub struct Arm {
    pub scaling: ScalingMode,
    pub pattern: PatternKind,
    pub output_error: f64,
}

pub fn run_example() -> oats::Result<Vec<Arm>> {
    let toy = toy_mlp(7);
    let x = toy.input();
    let reference = dense_forward(&toy.graph, &toy.weights, &x)?;
    let mut arms = Vec::new();
    for scaling in [ScalingMode::SecondMoment, ScalingMode::Identity] {
        for pattern in [PatternKind::RowWise, PatternKind::LayerWise] {
            let plan = CompressionPlan::new(0.5, 0.25)
                .with_iterations(40)
                .with_pattern(pattern)
                .with_scaling(scaling);
            let out = compress_model(&toy.weights, &toy.graph, Some(&toy.calib), &plan)?;
            let y = compressed_forward(&out.model, &toy.graph, &x)?;
            let output_error = relative_error(&y, &reference);
            println!("{scaling:?} + {pattern:?}: output error {output_error:.5}");
            arms.push(Arm {
                scaling,
                pattern,
                output_error,
            });
        }
    }
    Ok(arms)
}

#[allow(dead_code)]
fn main() -> oats::Result<()> {
    let arms = run_example()?;
    let best = &arms[0];
    for arm in &arms[1..] {
        println!(
            "margin vs {:?} + {:?}: {:+.5}",
            arm.scaling,
            arm.pattern,
            arm.output_error - best.output_error
        );
    }
    Ok(())
}
