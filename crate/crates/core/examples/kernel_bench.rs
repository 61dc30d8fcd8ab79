//! Times the apply kernels on one small shape and prints the CSV.

use oats::bench::{run_bench, write_csv, BenchConfig, BenchRecord};

pub fn run_example() -> oats::Result<Vec<BenchRecord>> {
    let cfg = BenchConfig {
        shapes: vec![(128, 128)],
        batch: 4,
        rho: vec![0.5],
        repetitions: 3,
        warmup: 1,
        ..Default::default()
    };
    let records = run_bench(&cfg)?;
    write_csv(&records, std::io::stdout())?;
    Ok(records)
}

#[allow(dead_code)]
fn main() -> oats::Result<()> {
    run_example().map(|_| ())
}
