use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oats::bench::CSV_HEADER;
use oats::cli::InspectSummary;
use oats::fixtures::{activations_with_outliers, gaussian_f32, rng, toy_mlp};
use oats::linalg::DenseMatrix;
use oats::pipeline::{
    Activation, Block, CompressionPlan, CompressionReport, LayerSpec, ModelGraph, ReconReport,
    MODE_WANDA,
};
use oats::scaling::ScalingMode;
use oats::tensor_store::{write_archive, TensorArchive};
use tempfile::TempDir;

fn oats(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oats"))
        .args(args)
        .env_remove("OATS_THREADS")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: TempDir::new().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn archive(&self, name: &str, a: &TensorArchive) -> PathBuf {
        let p = self.path(name);
        write_archive(a, &p).unwrap();
        p
    }

    fn text(&self, name: &str, body: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn plan(&self, name: &str, plan: &CompressionPlan) -> PathBuf {
        self.text(name, &serde_json::to_string(plan).unwrap())
    }

    fn toy(&self) -> (PathBuf, PathBuf, PathBuf) {
        let t = toy_mlp(3);
        (
            self.archive("weights.safetensors", &t.weights),
            self.text("graph.json", &t.graph.to_json()),
            self.archive("calib.safetensors", &t.calib),
        )
    }
}

fn compress(ws: &Workspace, plan: &Path, out: &str, dump: Option<&str>) -> Output {
    let (weights, graph, calib) = ws.toy();
    let out = ws.path(out);
    let mut args = vec![
        "compress",
        "--weights",
        s(&weights),
        "--graph",
        s(&graph),
        "--calib",
        s(&calib),
        "--plan",
        s(plan),
        "--out",
        s(&out),
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    if let Some(d) = dump {
        args.extend(["--dump-activations".into(), s(&ws.path(d)).to_string()]);
    }
    oats(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn compress_writes_artifact_and_report() {
    let ws = Workspace::new();
    let plan = ws.plan("plan.json", &CompressionPlan::new(0.5, 0.25).with_iterations(10));
    let o = compress(&ws, &plan, "model.safetensors", None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(ws.path("model.safetensors").exists());
    let report = CompressionReport::load(ws.path("report.json")).unwrap();
    assert_eq!(report.layers.len(), 2);
    for l in &report.layers {
        let rounding = 1.0 / (l.d_out * l.d_in) as f64 + (l.d_out + l.d_in) as f64 / (l.d_out * l.d_in) as f64;
        assert!(l.achieved_rho >= 0.5 - 1e-12 && l.achieved_rho <= 0.5 + rounding, "{}", l.achieved_rho);
    }
}

#[test]
fn missing_calibration_is_a_usage_error() {
    let ws = Workspace::new();
    let (weights, graph, _) = ws.toy();
    let plan = ws.plan("plan.json", &CompressionPlan::new(0.5, 0.25));
    let out = ws.path("m.safetensors");
    let o = oats(&[
        "compress", "--weights", s(&weights), "--graph", s(&graph), "--plan", s(&plan), "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--calib"));
    assert!(!out.exists());
}

#[test]
fn identity_scaling_runs_without_calibration() {
    let ws = Workspace::new();
    let (weights, graph, _) = ws.toy();
    let plan = ws.plan(
        "plan.json",
        &CompressionPlan::new(0.5, 0.25).with_iterations(5).with_scaling(ScalingMode::Identity),
    );
    let out = ws.path("m.safetensors");
    let o = oats(&[
        "compress", "--weights", s(&weights), "--graph", s(&graph), "--plan", s(&plan), "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn malformed_plan_is_a_usage_error() {
    let ws = Workspace::new();
    let plan = ws.text("plan.json", r#"{"rho": 0.5, "kappa": 0.25, "itertions": 3}"#);
    let o = compress(&ws, &plan, "m.safetensors", None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_rank_ratio_reports_wanda_mode() {
    let ws = Workspace::new();
    let plan = ws.plan("plan.json", &CompressionPlan::new(0.5, 0.0));
    let o = compress(&ws, &plan, "m.safetensors", None);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = CompressionReport::load(ws.path("report.json")).unwrap();
    assert_eq!(report.mode, MODE_WANDA);
    assert!(report.layers.iter().all(|l| l.r == 0));
}

#[test]
fn inspect_agrees_with_report() {
    let ws = Workspace::new();
    let plan = ws.plan("plan.json", &CompressionPlan::new(0.6, 0.3).with_iterations(8));
    assert!(compress(&ws, &plan, "m.safetensors", None).status.success());
    let report = CompressionReport::load(ws.path("report.json")).unwrap();

    let o = oats(&["inspect", "--artifact", s(&ws.path("m.safetensors")), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: InspectSummary = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary.dense_params, report.dense_params);
    assert_eq!(summary.retained_params, report.retained_params);
    assert_eq!(summary.passthrough, vec!["embed_tokens.weight".to_string()]);
    for (a, b) in summary.layers.iter().zip(&report.layers) {
        assert_eq!((&a.name, a.r, a.nnz), (&b.name, b.r, b.nnz));
    }

    let text = oats(&["inspect", "--artifact", s(&ws.path("m.safetensors"))]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("blocks.1.down"));

    let one = oats(&["inspect", "--artifact", s(&ws.path("m.safetensors")), "--layer", "blocks.0.up", "--json"]);
    let one: InspectSummary = serde_json::from_slice(&one.stdout).unwrap();
    assert_eq!(one.layers.len(), 1);
}

#[test]
fn inspect_unknown_layer_lists_available() {
    let ws = Workspace::new();
    let plan = ws.plan("plan.json", &CompressionPlan::new(0.5, 0.25).with_iterations(3));
    assert!(compress(&ws, &plan, "m.safetensors", None).status.success());
    let o = oats(&["inspect", "--artifact", s(&ws.path("m.safetensors")), "--layer", "nope"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("blocks.0.up"));
}

fn recon(ws: &Workspace, weights: &Path, artifact: &str, calib: &str) -> ReconReport {
    let o = oats(&[
        "eval-recon",
        "--weights",
        s(weights),
        "--artifact",
        s(&ws.path(artifact)),
        "--calib",
        s(&ws.path(calib)),
        "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn exact_low_rank_layer_reconstructs_losslessly() {
    let ws = Workspace::new();
    let mut r = rng(17);
    let a = gaussian_f32(32, 2, &mut r);
    let b = gaussian_f32(2, 32, &mut r);
    let w: DenseMatrix = a.matmul(&b).unwrap();
    let mut weights = TensorArchive::new();
    weights.insert(w.to_tensor("proj.weight")).unwrap();
    let mut calib = TensorArchive::new();
    calib.insert(activations_with_outliers(128, 32, 2, 10.0, 4).to_tensor("input")).unwrap();
    let graph = ModelGraph {
        blocks: vec![Block {
            name: None,
            layers: vec![LayerSpec::new("proj", 32, 32)],
            activation: Activation::Identity,
            residual: false,
        }],
    };
    let wp = ws.archive("w.safetensors", &weights);
    let cp = ws.archive("c.safetensors", &calib);
    let gp = ws.text("g.json", &graph.to_json());
    let plan = ws.plan("p.json", &CompressionPlan::new(0.5, 0.25).with_iterations(10));
    let o = oats(&[
        "compress", "--weights", s(&wp), "--graph", s(&gp), "--calib", s(&cp), "--plan", s(&plan),
        "--out", s(&ws.path("m.safetensors")), "--dump-activations", s(&ws.path("acts.safetensors")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = recon(&ws, &wp, "m.safetensors", "acts.safetensors");
    assert_eq!(rep.layers.len(), 1);
    assert!(rep.aggregate <= 1e-4, "{}", rep.aggregate);
}

#[test]
fn low_rank_term_lowers_error_on_structured_weights() {
    let ws = Workspace::new();
    let (weights, _, _) = ws.toy();
    let mut errs = Vec::new();
    for (tag, kappa) in [("a", 0.0), ("b", 0.25)] {
        let plan = ws.plan(&format!("{tag}.json"), &CompressionPlan::new(0.6, kappa).with_iterations(40));
        let o = compress(&ws, &plan, &format!("{tag}.safetensors"), Some(&format!("{tag}-acts.safetensors")));
        assert!(o.status.success(), "{}", stderr(&o));
        errs.push(recon(&ws, &weights, &format!("{tag}.safetensors"), &format!("{tag}-acts.safetensors")).aggregate);
    }
    assert!(errs[1] < errs[0], "{errs:?}");
}

fn small_bench(ws: &Workspace, extra: &str) -> PathBuf {
    ws.text(
        "bench.json",
        &format!(r#"{{"shapes": [[32, 32]], "rho": [0.5], "repetitions": 3, "warmup": 0{extra}}}"#),
    )
}

#[test]
fn bench_writes_csv_and_sidecar() {
    let ws = Workspace::new();
    let cfg = small_bench(&ws, "");
    let out = ws.path("bench.csv");
    let o = oats(&["bench", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER.join(","));
    assert!(csv.lines().count() > 2);
    assert!(out.with_extension("json").exists());
}

#[test]
fn bench_rejects_too_few_repetitions() {
    let ws = Workspace::new();
    let cfg = ws.text("bench.json", r#"{"repetitions": 2}"#);
    let o = oats(&["bench", "--config", s(&cfg), "--out", s(&ws.path("b.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_unwritable_output_is_a_runtime_error() {
    let ws = Workspace::new();
    let cfg = small_bench(&ws, "");
    let out = ws.path("missing-dir").join("b.csv");
    let o = oats(&["bench", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_thread_settings_are_usage_errors() {
    let o = oats(&["--threads", "0", "bench", "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_oats"))
        .args(["bench", "--out", "x.csv"])
        .env("OATS_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(oats(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(oats(&["--help"]).status.code(), Some(0));
}
