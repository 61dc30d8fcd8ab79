//! Whole-model compression: calibration, per-layer decomposition and
//! activation propagation through already-compressed blocks.

pub mod artifact;
pub mod graph;
pub mod layer;
pub mod plan;
pub mod report;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::{
    alternating_thresholding_scaled, budget_for_nm, solve_budget, LayerBudget,
};
use crate::error::{OatsError, Result};
use crate::kernels::relative_error;
use crate::linalg::{frob_dist_sq, frob_norm_sq, DenseMatrix};
use crate::scaling::{diag_from_activations, scale_weights, ScalingDiag, ScalingMode};
use crate::tensor_store::TensorArchive;

pub use artifact::CompressedModel;
pub use graph::{block_forward, dense_forward, Activation, Block, DenseLayer, LayerSpec, ModelGraph};
pub use layer::{apply_compressed, SparseLowRankLayer};
pub use plan::{CompressionPlan, PatternKind, Preset};
pub use report::{CompressionReport, LayerReport, MODE_SPARSE_LOW_RANK, MODE_WANDA};

/// Suffix of per-layer calibration inputs in an activations archive.
pub const INPUT_SUFFIX: &str = ".input";

/// Everything a compression run produces.
#[derive(Debug, Clone)]
pub struct CompressionOutput {
    pub model: CompressedModel,
    pub report: CompressionReport,
    /// `<layer>.input` for every layer, as seen during compression. Empty
    /// when the run had no calibration data.
    pub activations: TensorArchive,
}

/// Locates the network input in a calibration archive: `<first layer>.input`,
/// then `input`, then the only tensor present.
pub fn calibration_input(calib: &TensorArchive, graph: &ModelGraph) -> Result<DenseMatrix> {
    let first = graph
        .first_layer()
        .ok_or_else(|| OatsError::Shape("graph has no layers".into()))?;
    let named = format!("{}{INPUT_SUFFIX}", first.name);
    let t = calib
        .get(&named)
        .or_else(|| calib.get("input"))
        .or_else(|| {
            (calib.len() == 1)
                .then(|| calib.tensors.values().next())
                .flatten()
        })
        .ok_or_else(|| {
            OatsError::Calibration(format!(
                "no `{named}` or `input` tensor among {} calibration tensors",
                calib.len()
            ))
        })?;
    let x = DenseMatrix::from_tensor(t)?;
    if x.cols() != graph.input_dim() {
        return Err(OatsError::Calibration(format!(
            "calibration tensor `{}` has {} features, graph expects {}",
            t.name,
            x.cols(),
            graph.input_dim()
        )));
    }
    if x.rows() == 0 {
        return Err(OatsError::Calibration("calibration batch is empty".into()));
    }
    x.ensure_finite("calibration activations")?;
    Ok(x)
}

/// Budget for one layer under `plan`.
pub fn layer_budget(plan: &CompressionPlan, name: &str, d_out: usize, d_in: usize) -> Result<LayerBudget> {
    match plan.pattern {
        PatternKind::LayerWise => Ok(solve_budget(d_out, d_in, plan.rho_for(name), plan.kappa)?.layer_wise()),
        PatternKind::RowWise => Ok(solve_budget(d_out, d_in, plan.rho_for(name), plan.kappa)?.row_wise()),
        PatternKind::NofM { n, m } => budget_for_nm(d_out, d_in, n, m, plan.kappa),
    }
}

/// Compresses one dense weight given its scaling diagonal.
pub fn compress_layer(
    name: &str,
    weight: &DenseMatrix,
    bias: Option<Vec<f32>>,
    diag: &ScalingDiag,
    plan: &CompressionPlan,
    dtype: crate::tensor_store::Dtype,
) -> Result<(SparseLowRankLayer, LayerReport)> {
    let start = Instant::now();
    let (d_out, d_in) = weight.shape();
    if diag.len() != d_in {
        return Err(OatsError::Shape(format!(
            "layer `{name}`: scaling has {} entries for {d_in} inputs",
            diag.len()
        )));
    }
    weight.ensure_finite(&format!("weight of `{name}`"))?;
    let budget = layer_budget(plan, name, d_out, d_in)?;
    let wd = scale_weights(weight, diag)?.cast::<f64>();
    let result = alternating_thresholding_scaled(&wd, &budget, &plan.decompose_options(), diag)?;
    let layer = SparseLowRankLayer::from_decomposition(name, &result, diag, bias, dtype)?;
    let report = LayerReport {
        name: name.to_string(),
        weight_tensor: String::new(),
        d_out,
        d_in,
        rho_target: plan.rho_for(name),
        r: layer.rank(),
        k: budget.k,
        nnz: layer.nnz(),
        achieved_rho: layer.achieved_rho(),
        final_objective: result.final_objective(),
        iterations: result.iterations(),
        wall_time_ms: Some(start.elapsed().as_secs_f64() * 1e3),
    };
    Ok((layer, report))
}

enum Slot {
    Compressed(Box<SparseLowRankLayer>),
    Dense(DenseLayer),
}

impl Slot {
    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            Slot::Compressed(l) => l.apply(x),
            Slot::Dense(l) => l.apply(x),
        }
    }
}

/// Compresses every non-excluded layer of `graph`.
///
/// Blocks are processed in order. Each block sees the output of the
/// previously compressed blocks; within a block, every layer's scaling is
/// computed from a dense pass of that block, so its layers compress
/// independently (and in parallel).
pub fn compress_model(
    weights: &TensorArchive,
    graph: &ModelGraph,
    calib: Option<&TensorArchive>,
    plan: &CompressionPlan,
) -> Result<CompressionOutput> {
    let start = Instant::now();
    plan.validate()?;
    graph.validate_weights(weights)?;
    let mut x = match calib {
        Some(c) => Some(calibration_input(c, graph)?),
        None if plan.scaling_mode == ScalingMode::Identity => None,
        None => {
            return Err(OatsError::Calibration(format!(
                "{:?} scaling needs calibration activations",
                plan.scaling_mode
            )))
        }
    };

    let mut model = CompressedModel {
        plan: Some(plan.clone()),
        ..Default::default()
    };
    let mut activations = TensorArchive::new();
    let mut layer_reports = Vec::new();
    let mut excluded = Vec::new();
    let mut consumed = std::collections::HashSet::new();
    let mut index = 0u64;

    for block in &graph.blocks {
        let dense: Vec<DenseLayer> = block
            .layers
            .iter()
            .map(|l| DenseLayer::load(l, weights))
            .collect::<Result<_>>()?;
        let inputs = match &x {
            Some(x) => Some(block_forward(block, x, |i, h| dense[i].apply(h))?.0),
            None => None,
        };

        let jobs: Vec<(usize, u64)> = (0..block.layers.len())
            .map(|i| {
                index += 1;
                (i, index - 1)
            })
            .collect();
        let results: Vec<Result<Option<(SparseLowRankLayer, LayerReport)>>> = jobs
            .par_iter()
            .map(|&(i, seq)| {
                let spec = &block.layers[i];
                if plan.is_excluded(&spec.name) {
                    return Ok(None);
                }
                let diag = match &inputs {
                    Some(inp) => diag_from_activations(
                        &inp[i],
                        plan.scaling_mode,
                        plan.seed.wrapping_add(seq),
                    )?,
                    None => ScalingDiag::identity(spec.d_in),
                };
                let dtype = artifact::layer_dtype(weights.require(&spec.weight_name())?.dtype);
                let (layer, mut rep) = compress_layer(
                    &spec.name,
                    &dense[i].weight,
                    dense[i].bias.clone(),
                    &diag,
                    plan,
                    dtype,
                )?;
                rep.weight_tensor = spec.weight_name();
                Ok(Some((layer, rep)))
            })
            .collect();

        let mut slots = Vec::with_capacity(block.layers.len());
        for ((spec, res), dense_layer) in block.layers.iter().zip(results).zip(dense) {
            match res? {
                Some((layer, rep)) => {
                    consumed.insert(spec.weight_name());
                    if let Some(b) = &spec.bias {
                        consumed.insert(b.clone());
                    }
                    layer_reports.push(rep);
                    model.layers.insert(spec.name.clone(), layer.clone());
                    slots.push(Slot::Compressed(Box::new(layer)));
                }
                None => {
                    excluded.push(spec.name.clone());
                    slots.push(Slot::Dense(dense_layer));
                }
            }
        }
        if let (Some(inputs), Some(xb)) = (inputs, x.as_ref()) {
            for (spec, inp) in block.layers.iter().zip(&inputs) {
                activations.insert(inp.to_tensor(format!("{}{INPUT_SUFFIX}", spec.name)))?;
            }
            x = Some(block_forward(block, xb, |i, h| slots[i].apply(h))?.1);
        }
    }

    for t in weights.tensors.values() {
        if !consumed.contains(&t.name) {
            model.passthrough.insert(t.clone())?;
        }
    }
    model.passthrough.metadata = weights.metadata.clone();

    let mode = if plan.is_wanda_equivalent() {
        MODE_WANDA
    } else {
        MODE_SPARSE_LOW_RANK
    };
    let mut report = CompressionReport::new(mode, layer_reports, excluded);
    report.total_wall_time_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    model.report = Some(report.clone());
    Ok(CompressionOutput {
        model,
        report,
        activations,
    })
}

/// Runs `graph` with compressed layers where available and the dense
/// passthrough weights elsewhere.
pub fn compressed_forward(model: &CompressedModel, graph: &ModelGraph, x: &DenseMatrix) -> Result<DenseMatrix> {
    let mut h = x.clone();
    for block in &graph.blocks {
        let slots: Vec<Slot> = block
            .layers
            .iter()
            .map(|spec| match model.layer(&spec.name) {
                Some(l) => Ok(Slot::Compressed(Box::new(l.clone()))),
                None => DenseLayer::load(spec, &model.passthrough).map(Slot::Dense),
            })
            .collect::<Result<_>>()?;
        h = block_forward(block, &h, |i, x| slots[i].apply(x))?.1;
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecon {
    pub name: String,
    pub samples: usize,
    /// `‖XWᵀ − XŴᵀ‖_F / ‖XWᵀ‖_F`.
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub layers: Vec<LayerRecon>,
    /// Layers that had no calibration tensor.
    pub skipped: Vec<String>,
    /// Error pooled over all evaluated layers.
    pub aggregate: f64,
}

/// Per-layer output reconstruction error of `model` against the dense
/// weights, on the `<layer>.input` tensors of `calib`. Biases are ignored.
///
/// The dense weight of each layer is looked up under the name recorded in
/// the embedded report, falling back to `<layer>.weight`.
pub fn eval_recon(
    model: &CompressedModel,
    original: &TensorArchive,
    calib: &TensorArchive,
) -> Result<ReconReport> {
    let mut layers = Vec::new();
    let mut skipped = Vec::new();
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (name, compressed) in &model.layers {
        let Some(t) = calib.get(&format!("{name}{INPUT_SUFFIX}")) else {
            skipped.push(name.clone());
            continue;
        };
        let weight_name = model
            .report
            .as_ref()
            .and_then(|r| r.layer(name))
            .map(|l| l.weight_tensor.clone())
            .filter(|w| !w.is_empty())
            .unwrap_or_else(|| format!("{name}.weight"));
        let x = DenseMatrix::from_tensor(t)?;
        let w = DenseMatrix::from_tensor(original.require(&weight_name)?)?;
        if w.shape() != (compressed.d_out(), compressed.d_in()) || x.cols() != w.cols() {
            return Err(OatsError::Shape(format!(
                "layer `{name}`: weight {:?}, compressed {}x{}, inputs {:?}",
                w.shape(),
                compressed.d_out(),
                compressed.d_in(),
                x.shape()
            )));
        }
        let reference = x.matmul_t(&w)?;
        let approx = compressed.apply_weight(&x)?;
        num += frob_dist_sq(&reference, &approx);
        den += frob_norm_sq(&reference);
        layers.push(LayerRecon {
            name: name.clone(),
            samples: x.rows(),
            relative_error: relative_error(&approx, &reference),
        });
    }
    if layers.is_empty() {
        return Err(OatsError::Calibration(
            "no compressed layer has a matching `<layer>.input` calibration tensor".into(),
        ));
    }
    let aggregate = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    Ok(ReconReport {
        layers,
        skipped,
        aggregate,
    })
}
