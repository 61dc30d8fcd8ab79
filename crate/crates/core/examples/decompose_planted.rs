//! Recovers a planted low-rank plus sparse matrix with the alternating loop.

use oats::decompose::{alternating_thresholding, DecomposeOptions, LayerBudget};
use oats::fixtures::planted_orthogonal;
use oats::linalg::{frob_dist_sq, frob_norm_sq};
use oats::thresholding::SparsityPattern;

pub fn run_example() -> oats::Result<f64> {
    let inst = planted_orthogonal(16, 16, 2, 8, 5.0, 42);
    let wd = inst.matrix();
    let budget = LayerBudget {
        r: inst.rank,
        k: inst.spikes,
        pattern: SparsityPattern::LayerWise(inst.spikes),
    };
    let result = alternating_thresholding(&wd, &budget, &DecomposeOptions::default())?;
    let trace = &result.objective_trace;
    println!("objective after 1 iteration: {:.3e}", trace[0]);
    println!("objective after {} iterations: {:.3e}", trace.len(), result.final_objective());
    let relative = result.final_objective() / frob_norm_sq(&wd);
    let sparse_err = frob_dist_sq(&result.sparse.values, &inst.sparse).sqrt();
    println!("relative objective {relative:.3e}, sparse term error {sparse_err:.3e}");
    Ok(relative)
}

#[allow(dead_code)]
fn main() -> oats::Result<()> {
    run_example().map(|_| ())
}
