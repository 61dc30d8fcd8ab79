use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decompose::{DecomposeOptions, SparseStepScaling, ThresholdOrder, DEFAULT_ITERATIONS};
use crate::error::{OatsError, Result};
use crate::linalg::SvdMode;
use crate::scaling::ScalingMode;

/// Granularity of the sparse term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    LayerWise,
    #[default]
    RowWise,
    #[serde(rename = "n_of_m")]
    NofM {
        n: usize,
        m: usize,
    },
}

/// Named hyperparameter presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 80 iterations, rank ratio 0.25.
    Phi3,
    /// 80 iterations, rank ratio 0.30.
    Llama3,
}

impl Preset {
    pub fn iterations(self) -> usize {
        80
    }

    pub fn kappa(self) -> f64 {
        match self {
            Preset::Phi3 => 0.25,
            Preset::Llama3 => 0.30,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = OatsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi3" => Ok(Preset::Phi3),
            "llama3" => Ok(Preset::Llama3),
            other => Err(OatsError::Config(format!(
                "unknown preset `{other}` (expected phi3 or llama3)"
            ))),
        }
    }
}

/// Calibration size used for real model dumps: sequences × tokens.
pub const DEFAULT_CALIBRATION_SEQUENCES: usize = 128;
pub const DEFAULT_CALIBRATION_SEQ_LEN: usize = 2048;

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}

fn default_exclude() -> Vec<String> {
    vec!["*embed*".into(), "*lm_head*".into(), "head*".into()]
}

/// Every knob of a compression run. Serialized as the plan JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionPlan {
    /// Target fraction of parameters removed per layer.
    pub rho: f64,
    /// Fraction of retained parameters assigned to the low-rank term.
    pub kappa: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub pattern: PatternKind,
    #[serde(default)]
    pub scaling_mode: ScalingMode,
    #[serde(default)]
    pub order: ThresholdOrder,
    #[serde(default)]
    pub sparse_step_scaling: SparseStepScaling,
    /// Per-layer overrides of `rho` (for example externally computed
    /// outlier-weighted ratios).
    #[serde(default)]
    pub per_layer_rho: BTreeMap<String, f64>,
    /// Glob patterns of layer names left uncompressed.
    #[serde(default = "default_exclude")]
    pub exclude: Vec<String>,
    #[serde(default)]
    pub svd_mode: SvdMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

impl CompressionPlan {
    pub fn new(rho: f64, kappa: f64) -> Self {
        Self {
            rho,
            kappa,
            iterations: DEFAULT_ITERATIONS,
            pattern: PatternKind::default(),
            scaling_mode: ScalingMode::default(),
            order: ThresholdOrder::default(),
            sparse_step_scaling: SparseStepScaling::default(),
            per_layer_rho: BTreeMap::new(),
            exclude: default_exclude(),
            svd_mode: SvdMode::Exact,
            seed: 0,
            tolerance: None,
        }
    }

    pub fn from_preset(rho: f64, preset: Preset) -> Self {
        let mut p = Self::new(rho, preset.kappa());
        p.iterations = preset.iterations();
        p
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        self.iterations = preset.iterations();
        self.kappa = preset.kappa();
    }

    pub fn with_iterations(mut self, n: usize) -> Self {
        self.iterations = n;
        self
    }

    pub fn with_pattern(mut self, pattern: PatternKind) -> Self {
        self.pattern = pattern;
        self
    }

    pub fn with_scaling(mut self, mode: ScalingMode) -> Self {
        self.scaling_mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(OatsError::Config(format!("rho {} not in (0, 1)", self.rho)));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(OatsError::Config(format!("kappa {} not in [0, 1)", self.kappa)));
        }
        if self.iterations == 0 {
            return Err(OatsError::Config("iterations must be at least 1".into()));
        }
        for (name, &r) in &self.per_layer_rho {
            if !(r > 0.0 && r < 1.0) {
                return Err(OatsError::Config(format!(
                    "per_layer_rho[{name}] = {r} not in (0, 1)"
                )));
            }
        }
        if let PatternKind::NofM { n, m } = self.pattern {
            if n == 0 || n > m {
                return Err(OatsError::Config(format!("pattern {n}:{m} needs 0 < n <= m")));
            }
        }
        for pat in &self.exclude {
            glob::Pattern::new(pat)
                .map_err(|e| OatsError::Config(format!("bad exclude pattern `{pat}`: {e}")))?;
        }
        Ok(())
    }

    /// True when the low-rank term is disabled and the run reduces to
    /// activation-weighted magnitude pruning.
    pub fn is_wanda_equivalent(&self) -> bool {
        self.kappa == 0.0
    }

    pub fn rho_for(&self, layer: &str) -> f64 {
        self.per_layer_rho.get(layer).copied().unwrap_or(self.rho)
    }

    pub fn is_excluded(&self, layer: &str) -> bool {
        self.exclude.iter().any(|p| {
            glob::Pattern::new(p)
                .map(|pat| pat.matches(layer))
                .unwrap_or(false)
        })
    }

    pub fn decompose_options(&self) -> DecomposeOptions {
        DecomposeOptions {
            iterations: self.iterations,
            order: self.order,
            sparse_step_scaling: self.sparse_step_scaling,
            svd_mode: self.svd_mode,
            tolerance: self.tolerance,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(s)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| OatsError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }
}
