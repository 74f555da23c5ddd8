//! Versioned experiment configuration. Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};

use crate::gradients::MemoryMode;
use crate::selection::{CostFn, Objective};
use crate::trainer::Algorithm;

pub const CONFIG_SCHEMA: &str = "mpchorizon-config/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<MemorySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<EvaluateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheorySpec>,
}

impl ExperimentConfig {
    pub fn minimal(seed: u64) -> Self {
        Self {
            schema: CONFIG_SCHEMA.to_owned(),
            seed,
            network: None,
            dataset: None,
            train: None,
            sweep: None,
            memory: None,
            selection: None,
            evaluate: None,
            theory: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    /// Dense input block, `depth - 2` mlp-residual blocks, dense output head.
    ResMlp {
        input_dim: usize,
        width: usize,
        output_dim: usize,
        depth: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weight_std: Option<f64>,
    },
    ResLinear {
        width: usize,
        depth: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weight_std: Option<f64>,
    },
    MlpResidualStack {
        width: usize,
        depth: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weight_std: Option<f64>,
    },
    /// Deep linear chain `I + W~/T` with `|W~|_2 <= c`.
    PerturbedIdentity { n: usize, depth: usize, c: f64 },
    File { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Linear {
        n: usize,
        samples: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default)]
        whiten: bool,
    },
    Trig {
        samples: usize,
        width: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise_std: Option<f64>,
        #[serde(default)]
        whiten: bool,
    },
    File { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<f64>,
    /// Defaults to full back-propagation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Algorithm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub batches: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<usize>>,
    pub batches: usize,
    pub batch_size: usize,
    /// Epochs at which gradients are compared; training follows the `train` section.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<MemoryMode>,
    #[serde(default)]
    pub fixed_overhead: f64,
    /// Uniform per-block units; otherwise the network's state widths are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform_units: Option<f64>,
    /// Block count when no network is configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    /// Even LoCo groupings to account alongside the horizons.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loco_stages: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    /// `cos^2 = 1 - k (1 - h/T)^3`, `M = a h + b`.
    Planted {
        depth: usize,
        k: f64,
        a: f64,
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizons: Option<Vec<usize>>,
    },
    /// Measured on the configured network and dataset.
    Measured {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizons: Option<Vec<usize>>,
        batches: usize,
        batch_size: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        memory_mode: Option<MemoryMode>,
        #[serde(default)]
        fixed_overhead: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSpec {
    pub profile: ProfileSpec,
    pub objective: Objective,
    pub cost: CostFn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvalAlgorithm {
    Mpc { horizon: usize },
    Loco { stages: usize },
    /// Horizon chosen by the selection procedure on a measured profile.
    Selected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSpec {
    pub algorithms: Vec<EvalAlgorithm>,
    pub objective: Objective,
    pub cost: CostFn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_mode: Option<MemoryMode>,
    #[serde(default)]
    pub fixed_overhead: f64,
    /// Profile used by the `selected` algorithm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<BatchSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySpec {
    pub n: usize,
    pub depth: usize,
    pub c: f64,
    pub seeds: usize,
    pub alphas: Vec<f64>,
    pub slope_window: [f64; 2],
    pub lemma_chains: usize,
    pub lemma_depth: usize,
    pub lemma_samples: usize,
}

impl Default for TheorySpec {
    fn default() -> Self {
        Self {
            n: 8,
            depth: 100,
            c: 1.0,
            seeds: 5,
            alphas: vec![0.70, 0.75, 0.80, 0.85, 0.90, 0.95],
            slope_window: [2.0, 4.0],
            lemma_chains: 20,
            lemma_depth: 64,
            lemma_samples: 100,
        }
    }
}
