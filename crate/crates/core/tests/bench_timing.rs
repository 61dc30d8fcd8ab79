use oats::bench::{run_bench, BenchConfig, BenchRecord};

fn find<'a>(records: &'a [BenchRecord], kernel: &str, batch: usize) -> &'a BenchRecord {
    records
        .iter()
        .find(|r| r.kernel == kernel && r.batch == batch)
        .unwrap_or_else(|| panic!("no {kernel} record at batch {batch}"))
}

fn config(shape: usize, rho: f64, batch: usize) -> BenchConfig {
    BenchConfig {
        shapes: vec![(shape, shape)],
        batch,
        rho: vec![rho],
        kappa: vec![0.25],
        repetitions: 5,
        warmup: 1,
        nm: None,
        parallel: false,
        ..BenchConfig::default()
    }
}

#[test]
fn sparse_kernel_beats_dense_when_very_sparse() {
    let records = run_bench(&config(2048, 0.95, 1)).unwrap();
    let csr = find(&records, "csr", 1);
    assert!(csr.speedup_vs_dense > 1.0, "csr speedup {}", csr.speedup_vs_dense);
}

#[test]
fn doubling_batch_does_not_shrink_work() {
    let one = run_bench(&config(512, 0.5, 8)).unwrap();
    let two = run_bench(&config(512, 0.5, 16)).unwrap();
    for kernel in ["dense", "csr", "sparse_lowrank"] {
        let (a, b) = (find(&one, kernel, 8), find(&two, kernel, 16));
        assert_eq!(b.flops, 2 * a.flops, "{kernel}");
        assert!(b.ns_median > 1.1 * a.ns_median, "{kernel}: {} vs {}", a.ns_median, b.ns_median);
    }
}
