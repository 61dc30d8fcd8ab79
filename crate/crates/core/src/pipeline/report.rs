use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OatsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub weight_tensor: String,
    pub d_out: usize,
    pub d_in: usize,
    pub rho_target: f64,
    pub r: usize,
    /// Sparse budget before pattern rounding.
    pub k: usize,
    /// Stored sparse entries.
    pub nnz: usize,
    pub achieved_rho: f64,
    pub final_objective: f64,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    /// `"wanda-equivalent"` when the rank ratio is zero, otherwise
    /// `"sparse-plus-low-rank"`.
    pub mode: String,
    pub layers: Vec<LayerReport>,
    pub excluded: Vec<String>,
    /// Dense parameter count of the compressed layers.
    pub dense_params: usize,
    pub retained_params: usize,
    pub achieved_compression: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_wall_time_ms: Option<f64>,
}

pub const MODE_WANDA: &str = "wanda-equivalent";
pub const MODE_SPARSE_LOW_RANK: &str = "sparse-plus-low-rank";

impl CompressionReport {
    pub fn new(mode: &str, layers: Vec<LayerReport>, excluded: Vec<String>) -> Self {
        let dense_params = layers.iter().map(|l| l.d_out * l.d_in).sum();
        let retained_params = layers.iter().map(|l| l.nnz + l.r * (l.d_out + l.d_in)).sum();
        let achieved_compression = if dense_params == 0 {
            0.0
        } else {
            1.0 - retained_params as f64 / dense_params as f64
        };
        Self {
            mode: mode.to_string(),
            layers,
            excluded,
            dense_params,
            retained_params,
            achieved_compression,
            total_wall_time_ms: None,
        }
    }

    /// Copy with wall-clock fields removed, so it can be embedded in
    /// artifacts that must be reproducible byte for byte.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.total_wall_time_ms = None;
        r.layers.iter_mut().for_each(|l| l.wall_time_ms = None);
        r
    }

    pub fn layer(&self, name: &str) -> Option<&LayerReport> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_pretty() + "\n").map_err(|e| OatsError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| OatsError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
