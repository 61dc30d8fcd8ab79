//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::{run_bench, write_csv, BenchConfig, BenchSidecar};
use crate::error::OatsError;
use crate::pipeline::{
    compress_model, eval_recon, CompressedModel, CompressionPlan, ModelGraph, Preset,
};
use crate::scaling::ScalingMode;
use crate::tensor_store::{read_archive, write_archive};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const THREADS_ENV: &str = "OATS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "oats", version, about = "Sparse plus low-rank compression of linear layers")]
pub struct Cli {
    /// Worker threads (falls back to OATS_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compress a checkpoint and write the artifact plus report.json.
    Compress(CompressArgs),
    /// Summarize a compressed artifact.
    Inspect(InspectArgs),
    /// Benchmark the apply kernels and write a CSV.
    Bench(BenchArgs),
    /// Per-layer output error of an artifact against the dense weights.
    EvalRecon(EvalReconArgs),
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    /// Calibration archive; required unless the plan uses identity scaling.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub plan: PathBuf,
    /// Overrides iterations and rank ratio of the plan.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `report.json` next to `--out`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write the per-layer inputs seen during compression.
    #[arg(long)]
    pub dump_activations: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSON config; defaults apply to omitted fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalReconArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub artifact: PathBuf,
    /// Archive of `<layer>.input` tensors, as written by `--dump-activations`.
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub json: bool,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: OatsError| e.to_string())
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(OatsError),
}

impl From<OatsError> for Failure {
    fn from(e: OatsError) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

/// Configuration problems found while reading a file are usage errors;
/// everything else is a runtime failure.
fn config_or_runtime(e: OatsError) -> Failure {
    match e {
        OatsError::Config(_) | OatsError::Json(_) => Failure::Usage(e.to_string()),
        other => Failure::Runtime(other),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let threads = match resolve_threads(cli.threads) {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let outcome = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command)),
            Err(e) => Err(Failure::Usage(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(&cli.command),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, String> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse()
                    .map_err(|_| format!("{THREADS_ENV}={v} is not a thread count"))?,
            ),
            _ => None,
        },
    };
    match n {
        Some(0) => Err("--threads must be at least 1".into()),
        other => Ok(other),
    }
}

fn dispatch(cmd: &Command) -> CmdResult {
    match cmd {
        Command::Compress(a) => cmd_compress(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Bench(a) => cmd_bench(a),
        Command::EvalRecon(a) => cmd_eval_recon(a),
    }
}

fn default_report_path(out: &Path) -> PathBuf {
    out.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .join("report.json")
}

fn cmd_compress(a: &CompressArgs) -> CmdResult {
    let mut plan = CompressionPlan::load(&a.plan).map_err(config_or_runtime)?;
    if let Some(p) = a.preset {
        plan.apply_preset(p);
    }
    if a.calib.is_none() && plan.scaling_mode != ScalingMode::Identity {
        return Err(Failure::Usage(format!(
            "--calib is required for {:?} scaling",
            plan.scaling_mode
        )));
    }
    let graph = ModelGraph::load(&a.graph).map_err(config_or_runtime)?;
    let weights = read_archive(&a.weights)?;
    let calib = a.calib.as_ref().map(read_archive).transpose()?;
    let out = compress_model(&weights, &graph, calib.as_ref(), &plan)?;
    out.model.save(&a.out)?;
    let report_path = a.report.clone().unwrap_or_else(|| default_report_path(&a.out));
    out.report.save(&report_path)?;
    if let Some(p) = &a.dump_activations {
        write_archive(&out.activations, p)?;
    }
    println!(
        "compressed {} layers ({} excluded), achieved compression {:.4}, mode {}",
        out.report.layers.len(),
        out.report.excluded.len(),
        out.report.achieved_compression,
        out.report.mode
    );
    println!("artifact: {}", a.out.display());
    println!("report: {}", report_path.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectLayer {
    pub name: String,
    pub dtype: String,
    pub d_out: usize,
    pub d_in: usize,
    pub r: usize,
    pub nnz: usize,
    pub achieved_rho: f64,
    pub final_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectSummary {
    pub mode: Option<String>,
    pub layers: Vec<InspectLayer>,
    pub passthrough: Vec<String>,
    pub dense_params: usize,
    pub retained_params: usize,
    pub achieved_compression: f64,
}

pub fn inspect_summary(model: &CompressedModel) -> InspectSummary {
    let layers: Vec<InspectLayer> = model
        .layers
        .values()
        .map(|l| InspectLayer {
            name: l.name.clone(),
            dtype: l.dtype.to_string(),
            d_out: l.d_out(),
            d_in: l.d_in(),
            r: l.rank(),
            nnz: l.nnz(),
            achieved_rho: l.achieved_rho(),
            final_objective: model
                .report
                .as_ref()
                .and_then(|r| r.layer(&l.name))
                .map(|r| r.final_objective),
        })
        .collect();
    let dense_params: usize = layers.iter().map(|l| l.d_out * l.d_in).sum();
    let retained_params: usize = layers.iter().map(|l| l.nnz + l.r * (l.d_out + l.d_in)).sum();
    InspectSummary {
        mode: model.report.as_ref().map(|r| r.mode.clone()),
        passthrough: model.passthrough.names().map(str::to_string).collect(),
        dense_params,
        retained_params,
        achieved_compression: if dense_params == 0 {
            0.0
        } else {
            1.0 - retained_params as f64 / dense_params as f64
        },
        layers,
    }
}

fn cmd_inspect(a: &InspectArgs) -> CmdResult {
    let model = CompressedModel::load(&a.artifact)?;
    let mut summary = inspect_summary(&model);
    if let Some(name) = &a.layer {
        if model.layer(name).is_none() {
            let available: Vec<&str> = model.layers.keys().map(String::as_str).collect();
            return Err(Failure::Runtime(OatsError::MissingTensor {
                name: format!("{name} (available layers: {})", available.join(", ")),
            }));
        }
        summary.layers.retain(|l| &l.name == name);
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&summary).map_err(OatsError::from)?);
        return Ok(());
    }
    if let Some(mode) = &summary.mode {
        println!("mode: {mode}");
    }
    println!(
        "{:<32} {:>6} {:>6} {:>5} {:>8} {:>8} {:>12}",
        "layer", "d_out", "d_in", "r", "nnz", "rho", "objective"
    );
    for l in &summary.layers {
        let obj = l.final_objective.map_or("-".to_string(), |v| format!("{v:.4e}"));
        println!(
            "{:<32} {:>6} {:>6} {:>5} {:>8} {:>8.4} {:>12}",
            l.name, l.d_out, l.d_in, l.r, l.nnz, l.achieved_rho, obj
        );
    }
    if a.layer.is_none() {
        println!(
            "total: {} dense params, {} retained, compression {:.4}, {} passthrough tensors",
            summary.dense_params,
            summary.retained_params,
            summary.achieved_compression,
            summary.passthrough.len()
        );
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> CmdResult {
    let cfg = match &a.config {
        Some(p) => BenchConfig::load(p).map_err(config_or_runtime)?,
        None => BenchConfig::default(),
    };
    cfg.validate().map_err(config_or_runtime)?;
    let file = File::create(&a.out).map_err(|e| OatsError::io(&a.out, e))?;
    let records = run_bench(&cfg)?;
    write_csv(&records, BufWriter::new(file))?;
    let sidecar_path = a.out.with_extension("json");
    let sidecar = serde_json::to_string_pretty(&BenchSidecar::new(&cfg, &records))
        .map_err(OatsError::from)?;
    std::fs::write(&sidecar_path, sidecar + "\n").map_err(|e| OatsError::io(&sidecar_path, e))?;
    for r in &records {
        println!(
            "{:<20} {:>5}x{:<5} rho={:<4} kappa={:<4} {:>12.0} ns  {:>6.2}x",
            r.kernel, r.d_out, r.d_in, r.rho, r.kappa, r.ns_median, r.speedup_vs_dense
        );
    }
    println!("wrote {} and {}", a.out.display(), sidecar_path.display());
    Ok(())
}

fn cmd_eval_recon(a: &EvalReconArgs) -> CmdResult {
    let model = CompressedModel::load(&a.artifact)?;
    let weights = read_archive(&a.weights)?;
    let calib = read_archive(&a.calib)?;
    let report = eval_recon(&model, &weights, &calib)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(OatsError::from)?);
        return Ok(());
    }
    for l in &report.layers {
        println!("{:<32} {:>8} samples  rel_err {:.6e}", l.name, l.samples, l.relative_error);
    }
    for s in &report.skipped {
        println!("{s:<32} skipped (no calibration input)");
    }
    println!("aggregate rel_err {:.6e}", report.aggregate);
    Ok(())
}
