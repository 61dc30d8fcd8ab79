//! Micro-benchmarks of the apply kernels against dense matmul.
//!
//! Numbers are per kernel call on a single layer, a finer granularity than
//! end-to-end token throughput.

use std::hint::black_box;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::decompose::solve_budget;
use crate::error::{OatsError, Result};
use crate::fixtures;
use crate::kernels::{
    dense_apply, dense_apply_par, relative_error, CsrMatrix, NmMatrix, SparseLowRank,
};
use crate::linalg::DenseMatrix;
use crate::thresholding::{hard_threshold, SparsityPattern};

/// Relative error every kernel must meet against the dense oracle before it
/// is timed.
pub const ORACLE_TOLERANCE: f64 = 1e-5;

/// End-to-end CPU speedups previously measured at 30%, 40% and 50%
/// compression. Shown next to the micro-kernel numbers, never compared.
pub const REFERENCE_SPEEDUPS: [(f64, f64); 3] = [(0.3, 1.38), (0.4, 1.73), (0.5, 2.06)];

pub const CSV_HEADER: [&str; 12] = [
    "kernel",
    "d_out",
    "d_in",
    "batch",
    "rho",
    "kappa",
    "nnz",
    "r",
    "flops",
    "ns_median",
    "gflops",
    "speedup_vs_dense",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub shapes: Vec<(usize, usize)>,
    pub batch: usize,
    pub rho: Vec<f64>,
    pub kappa: Vec<f64>,
    pub repetitions: usize,
    pub warmup: usize,
    pub seed: u64,
    /// `n:m` pattern for the structured kernel; `None` skips it.
    pub nm: Option<(usize, usize)>,
    /// Also time the row-parallel variants.
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            shapes: vec![(256, 256), (512, 512)],
            batch: 1,
            rho: vec![0.3, 0.4, 0.5],
            kappa: vec![0.25],
            repetitions: 5,
            warmup: 2,
            seed: 0,
            nm: Some((2, 4)),
            parallel: true,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 3 {
            return Err(OatsError::Config(format!(
                "repetitions must be at least 3, got {}",
                self.repetitions
            )));
        }
        if self.batch == 0 {
            return Err(OatsError::Config("batch must be positive".into()));
        }
        if self.shapes.is_empty() || self.shapes.iter().any(|&(m, n)| m == 0 || n == 0) {
            return Err(OatsError::Config("shapes must be non-empty and positive".into()));
        }
        for &r in &self.rho {
            if !(r > 0.0 && r < 1.0) {
                return Err(OatsError::Config(format!("rho {r} not in (0, 1)")));
            }
        }
        for &k in &self.kappa {
            if !(0.0..1.0).contains(&k) {
                return Err(OatsError::Config(format!("kappa {k} not in [0, 1)")));
            }
        }
        if let Some((n, m)) = self.nm {
            if n == 0 || n > m || self.shapes.iter().any(|&(_, d_in)| d_in % m != 0) {
                return Err(OatsError::Config(format!(
                    "{n}:{m} needs 0 < n <= m and every d_in divisible by {m}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| OatsError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Dense,
    Csr,
    NofM,
    SparseLowRank,
}

/// Multiply-add count of one apply, two flops per stored weight per batch row.
pub fn flops(kind: KernelKind, d_out: usize, d_in: usize, batch: usize, nnz: usize, r: usize) -> u64 {
    let per_row = match kind {
        KernelKind::Dense => d_out * d_in,
        KernelKind::Csr | KernelKind::NofM => nnz,
        KernelKind::SparseLowRank => nnz + r * (d_out + d_in),
    };
    2 * per_row as u64 * batch as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub kernel: String,
    pub d_out: usize,
    pub d_in: usize,
    pub batch: usize,
    pub rho: f64,
    pub kappa: f64,
    pub nnz: usize,
    pub r: usize,
    pub flops: u64,
    pub ns_median: f64,
    pub gflops: f64,
    pub speedup_vs_dense: f64,
    /// Worker count of the kernel (1 for serial kernels).
    pub threads: usize,
}

impl BenchRecord {
    fn csv_row(&self) -> Vec<String> {
        vec![
            self.kernel.clone(),
            self.d_out.to_string(),
            self.d_in.to_string(),
            self.batch.to_string(),
            self.rho.to_string(),
            self.kappa.to_string(),
            self.nnz.to_string(),
            self.r.to_string(),
            self.flops.to_string(),
            format!("{:.1}", self.ns_median),
            format!("{:.4}", self.gflops),
            format!("{:.4}", self.speedup_vs_dense),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub cpu: String,
    pub logical_cores: usize,
    pub rayon_threads: usize,
    pub os: String,
    pub arch: String,
}

impl MachineInfo {
    pub fn detect() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|v| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        Self {
            cpu,
            logical_cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
            rayon_threads: rayon::current_num_threads(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

/// Median wall time in nanoseconds of `f` after `warmup` untimed calls.
pub fn time_median(warmup: usize, repetitions: usize, mut f: impl FnMut()) -> f64 {
    for _ in 0..warmup {
        f();
    }
    let mut samples: Vec<f64> = (0..repetitions.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_nanos() as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

fn check_oracle(kernel: &str, got: &DenseMatrix, weight: &DenseMatrix, x: &DenseMatrix) -> Result<()> {
    let want = dense_apply(weight, x)?;
    let err = relative_error(got, &want);
    if err > ORACLE_TOLERANCE {
        return Err(OatsError::Shape(format!(
            "kernel {kernel} deviates from the dense oracle by {err:.3e}"
        )));
    }
    Ok(())
}

/// Random sparse-plus-low-rank factors with the budget of `(rho, kappa)`.
/// Timing depends only on the storage layout, so the factors need not come
/// from a decomposition.
pub fn synthetic_factors(w: &DenseMatrix, rho: f64, kappa: f64, seed: u64) -> Result<SparseLowRank> {
    let (d_out, d_in) = w.shape();
    let budget = solve_budget(d_out, d_in, rho, kappa)?.row_wise();
    let sparse = CsrMatrix::from_masked(&hard_threshold(w, budget.pattern)?);
    let mut rng = fixtures::rng(seed);
    let scale = 1.0 / (d_in as f32).sqrt();
    let u = fixtures::gaussian_f32(d_out, budget.r, &mut rng);
    let svt = fixtures::gaussian_f32(budget.r, d_in, &mut rng).map(|v| v * scale);
    SparseLowRank::new(sparse, u, svt)
}

struct Timed<'a> {
    cfg: &'a BenchConfig,
    x: &'a DenseMatrix,
    dense_ns: f64,
}

impl Timed<'_> {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        kernel: &str,
        kind: KernelKind,
        (d_out, d_in): (usize, usize),
        (rho, kappa): (f64, f64),
        (nnz, r): (usize, usize),
        threads: usize,
        ns: f64,
    ) -> BenchRecord {
        let flops = flops(kind, d_out, d_in, self.x.rows(), nnz, r);
        BenchRecord {
            kernel: kernel.into(),
            d_out,
            d_in,
            batch: self.cfg.batch,
            rho,
            kappa,
            nnz,
            r,
            flops,
            ns_median: ns,
            gflops: flops as f64 / ns.max(1.0),
            speedup_vs_dense: self.dense_ns / ns.max(1.0),
            threads,
        }
    }

    fn time<T>(&self, f: impl Fn() -> Result<T>) -> f64 {
        time_median(self.cfg.warmup, self.cfg.repetitions, || {
            black_box(f().expect("validated kernel"));
        })
    }
}

/// Validates and times every kernel for every configured shape and budget.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let threads = rayon::current_num_threads();
    let mut out = Vec::new();
    for (si, &(d_out, d_in)) in cfg.shapes.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(si as u64 * 1000);
        let mut rng = fixtures::rng(seed);
        let w = fixtures::gaussian_f32(d_out, d_in, &mut rng);
        let x = fixtures::gaussian_f32(cfg.batch, d_in, &mut rng);
        let shape = (d_out, d_in);
        let dense_nnz = d_out * d_in;

        check_oracle("dense_par", &dense_apply_par(&w, &x)?, &w, &x)?;
        let mut t = Timed {
            cfg,
            x: &x,
            dense_ns: 1.0,
        };
        t.dense_ns = t.time(|| dense_apply(&w, &x));
        out.push(t.record("dense", KernelKind::Dense, shape, (0.0, 0.0), (dense_nnz, 0), 1, t.dense_ns));
        if cfg.parallel {
            let ns = t.time(|| dense_apply_par(&w, &x));
            out.push(t.record("dense_par", KernelKind::Dense, shape, (0.0, 0.0), (dense_nnz, 0), threads, ns));
        }

        for &rho in &cfg.rho {
            let k = solve_budget(d_out, d_in, rho, 0.0)?.k;
            let csr = CsrMatrix::from_masked(&hard_threshold(&w, SparsityPattern::RowWise(k))?);
            let w_csr = csr.to_dense();
            check_oracle("csr", &csr.apply(&x)?, &w_csr, &x)?;
            check_oracle("csr_par", &csr.apply_par(&x)?, &w_csr, &x)?;
            let ns = t.time(|| csr.apply(&x));
            out.push(t.record("csr", KernelKind::Csr, shape, (rho, 0.0), (csr.nnz(), 0), 1, ns));
            if cfg.parallel {
                let ns = t.time(|| csr.apply_par(&x));
                out.push(t.record("csr_par", KernelKind::Csr, shape, (rho, 0.0), (csr.nnz(), 0), threads, ns));
            }

            for (ki, &kappa) in cfg.kappa.iter().enumerate() {
                let f = synthetic_factors(&w, rho, kappa, seed.wrapping_add(1 + ki as u64))?;
                let w_f = f.to_dense();
                check_oracle("sparse_lowrank", &f.apply(&x)?, &w_f, &x)?;
                check_oracle("sparse_lowrank_par", &f.apply_par(&x)?, &w_f, &x)?;
                let size = (f.sparse.nnz(), f.rank());
                let ns = t.time(|| f.apply(&x));
                out.push(t.record("sparse_lowrank", KernelKind::SparseLowRank, shape, (rho, kappa), size, 1, ns));
                if cfg.parallel {
                    let ns = t.time(|| f.apply_par(&x));
                    out.push(t.record(
                        "sparse_lowrank_par",
                        KernelKind::SparseLowRank,
                        shape,
                        (rho, kappa),
                        size,
                        threads,
                        ns,
                    ));
                }
            }
        }

        if let Some((n, m)) = cfg.nm {
            let nm = NmMatrix::from_dense(&w, n, m)?;
            check_oracle("nm", &nm.apply(&x)?, &nm.to_dense(), &x)?;
            let ns = t.time(|| nm.apply(&x));
            let rho = 1.0 - n as f64 / m as f64;
            out.push(t.record("nm", KernelKind::NofM, shape, (rho, 0.0), (nm.nnz(), 0), 1, ns));
        }
    }
    Ok(out)
}

pub fn write_csv(records: &[BenchRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| OatsError::Config(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record(r.csv_row()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| OatsError::io("<csv>", e))?;
    Ok(())
}

/// Machine description, the run configuration and the reference speedups,
/// written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSidecar {
    pub granularity: String,
    pub machine: MachineInfo,
    pub config: BenchConfig,
    /// `(rho, speedup)` pairs of the end-to-end reference.
    pub reference_speedups: Vec<(f64, f64)>,
    pub records: Vec<BenchRecord>,
}

impl BenchSidecar {
    pub fn new(cfg: &BenchConfig, records: &[BenchRecord]) -> Self {
        Self {
            granularity: "micro-kernel (single layer apply), not end-to-end token generation".into(),
            machine: MachineInfo::detect(),
            config: cfg.clone(),
            reference_speedups: REFERENCE_SPEEDUPS.to_vec(),
            records: records.to_vec(),
        }
    }
}
