//! Budgets for unstructured and 2:4 sparsity with a low-rank term.

use oats::decompose::{budget_for_nm, solve_budget, LayerBudget};

pub fn run_example() -> oats::Result<Vec<LayerBudget>> {
    let mut out = Vec::new();
    for (d_out, d_in) in [(64, 64), (128, 64), (4096, 4096)] {
        let b = solve_budget(d_out, d_in, 0.5, 0.25)?;
        println!(
            "{d_out}x{d_in} rho=0.5 kappa=0.25: r={} k={} achieved {:.4}",
            b.r,
            b.k,
            b.compression_rate(d_out, d_in)
        );
        out.push(b);
        let nm = budget_for_nm(d_out, d_in, 2, 4, 0.25)?;
        println!(
            "{d_out}x{d_in} 2:4 kappa=0.25: r={} nnz={} achieved {:.4}",
            nm.r,
            nm.sparse_nnz(d_out, d_in),
            nm.compression_rate(d_out, d_in)
        );
        out.push(nm);
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> oats::Result<()> {
    run_example().map(|_| ())
}
