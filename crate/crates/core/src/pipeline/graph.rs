//! A minimal feed-forward executor: enough structure to propagate
//! calibration activations through already-compressed layers.
//!
//! A block applies its linear layers in sequence, each followed by the
//! block's elementwise activation, and optionally adds the block input to
//! the final output. Normalization and attention are not modelled.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OatsError, Result};
use crate::linalg::DenseMatrix;
use crate::tensor_store::TensorArchive;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    /// tanh approximation.
    Gelu,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Gelu => {
                const SQRT_2_OVER_PI: f32 = 0.797_884_6;
                0.5 * v * (1.0 + (SQRT_2_OVER_PI * (v + 0.044_715 * v * v * v)).tanh())
            }
        }
    }

    pub fn apply_matrix(self, m: &mut DenseMatrix) {
        if self != Activation::Identity {
            m.as_mut_slice().iter_mut().for_each(|v| *v = self.apply(*v));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub d_out: usize,
    pub d_in: usize,
    /// Weight tensor name; defaults to `<name>.weight`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<String>,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, d_out: usize, d_in: usize) -> Self {
        Self {
            name: name.into(),
            d_out,
            d_in,
            weight: None,
            bias: None,
        }
    }

    pub fn with_bias(mut self, tensor: impl Into<String>) -> Self {
        self.bias = Some(tensor.into());
        self
    }

    pub fn weight_name(&self) -> String {
        self.weight
            .clone()
            .unwrap_or_else(|| format!("{}.weight", self.name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub residual: bool,
}

impl Block {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.d_in)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelGraph {
    pub blocks: Vec<Block>,
}

impl ModelGraph {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| OatsError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.blocks.iter().flat_map(|b| b.layers.iter())
    }

    pub fn input_dim(&self) -> usize {
        self.blocks.first().map_or(0, Block::input_dim)
    }

    pub fn first_layer(&self) -> Option<&LayerSpec> {
        self.layers().next()
    }

    /// Checks name uniqueness and dimension chaining.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut prev_out: Option<usize> = None;
        if self.blocks.is_empty() {
            return Err(OatsError::Shape("graph has no blocks".into()));
        }
        for (bi, block) in self.blocks.iter().enumerate() {
            if block.layers.is_empty() {
                return Err(OatsError::Shape(format!("block {bi} has no layers")));
            }
            for layer in &block.layers {
                if !seen.insert(layer.name.as_str()) {
                    return Err(OatsError::DuplicateName(layer.name.clone()));
                }
                if let Some(p) = prev_out {
                    if p != layer.d_in {
                        return Err(OatsError::Shape(format!(
                            "layer `{}` expects {} inputs but receives {p}",
                            layer.name, layer.d_in
                        )));
                    }
                }
                prev_out = Some(layer.d_out);
            }
            if block.residual && block.input_dim() != block.output_dim() {
                return Err(OatsError::Shape(format!(
                    "residual block {bi} maps {} to {} features",
                    block.input_dim(),
                    block.output_dim()
                )));
            }
        }
        Ok(())
    }

    /// Checks that `weights` holds every tensor the graph references with
    /// matching shapes.
    pub fn validate_weights(&self, weights: &TensorArchive) -> Result<()> {
        self.validate()?;
        for layer in self.layers() {
            let w = weights.require(&layer.weight_name())?;
            if w.shape != [layer.d_out, layer.d_in] {
                return Err(OatsError::Shape(format!(
                    "weight `{}` has shape {:?}, graph says [{}, {}]",
                    w.name, w.shape, layer.d_out, layer.d_in
                )));
            }
            if let Some(b) = &layer.bias {
                let t = weights.require(b)?;
                if t.shape != [layer.d_out] {
                    return Err(OatsError::Shape(format!(
                        "bias `{b}` has shape {:?}, expected [{}]",
                        t.shape, layer.d_out
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A linear layer held densely, `y = x·Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: DenseMatrix,
    pub bias: Option<Vec<f32>>,
}

impl DenseLayer {
    pub fn load(spec: &LayerSpec, weights: &TensorArchive) -> Result<Self> {
        let weight = DenseMatrix::from_tensor(weights.require(&spec.weight_name())?)?;
        let bias = match &spec.bias {
            Some(b) => Some(weights.require(b)?.f32_values()?),
            None => None,
        };
        Ok(Self { weight, bias })
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut y = x.matmul_t(&self.weight)?;
        if let Some(b) = &self.bias {
            add_bias(&mut y, b);
        }
        Ok(y)
    }
}

pub(crate) fn add_bias(y: &mut DenseMatrix, bias: &[f32]) {
    for i in 0..y.rows() {
        for (v, b) in y.row_mut(i).iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

/// Runs one block. `apply(i, x)` evaluates the block's `i`-th linear layer.
/// Returns the input seen by every layer and the block output.
pub fn block_forward(
    block: &Block,
    x: &DenseMatrix,
    mut apply: impl FnMut(usize, &DenseMatrix) -> Result<DenseMatrix>,
) -> Result<(Vec<DenseMatrix>, DenseMatrix)> {
    let mut inputs = Vec::with_capacity(block.layers.len());
    let mut h = x.clone();
    for i in 0..block.layers.len() {
        let mut out = apply(i, &h)?;
        block.activation.apply_matrix(&mut out);
        inputs.push(std::mem::replace(&mut h, out));
    }
    if block.residual {
        h = h.add(x)?;
    }
    Ok((inputs, h))
}

/// Dense forward pass of the whole graph.
pub fn dense_forward(graph: &ModelGraph, weights: &TensorArchive, x: &DenseMatrix) -> Result<DenseMatrix> {
    let mut h = x.clone();
    for block in &graph.blocks {
        let layers = block
            .layers
            .iter()
            .map(|l| DenseLayer::load(l, weights))
            .collect::<Result<Vec<_>>>()?;
        h = block_forward(block, &h, |i, x| layers[i].apply(x))?.1;
    }
    Ok(h)
}
