//! Compresses a two-block MLP end to end and writes the artifact.

use oats::fixtures::toy_mlp;
use oats::kernels::relative_error;
use oats::pipeline::{compress_model, compressed_forward, dense_forward, CompressedModel, CompressionPlan, Preset};

pub fn run_example() -> oats::Result<CompressedModel> {
    let toy = toy_mlp(1);
    let plan = CompressionPlan::from_preset(0.5, Preset::Phi3).with_iterations(30);
    let out = compress_model(&toy.weights, &toy.graph, Some(&toy.calib), &plan)?;
    for l in &out.report.layers {
        println!(
            "{:<16} {}x{} r={} nnz={} rho={:.4}",
            l.name, l.d_out, l.d_in, l.r, l.nnz, l.achieved_rho
        );
    }
    let x = toy.input();
    let err = relative_error(
        &compressed_forward(&out.model, &toy.graph, &x)?,
        &dense_forward(&toy.graph, &toy.weights, &x)?,
    );
    println!("network output error {err:.4}");

    let dir = std::env::temp_dir().join(format!("oats-toy-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| oats::OatsError::Io { path: dir.clone(), source: e })?;
    let path = dir.join("toy.oats.safetensors");
    out.model.save(&path)?;
    let back = CompressedModel::load(&path)?;
    println!("artifact {} holds {} layers", path.display(), back.layers.len());
    let _ = std::fs::remove_dir_all(&dir);
    Ok(back)
}

#[allow(dead_code)]
fn main() -> oats::Result<()> {
    run_example().map(|_| ())
}
