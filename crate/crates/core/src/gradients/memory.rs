//! Activation-memory accountants, in abstract activation units.
//!
//! Eager mode keeps only the activations of the reverse window being processed,
//! so the peak is the largest sum of `h` consecutive block units plus a fixed
//! overhead (affine in `h` for uniform widths). Static mode keeps every window's
//! activations in one graph: the total is the sum over blocks of the window
//! lengths, whose leading term is `h (T - h + 1)`.

use serde::{Deserialize, Serialize};

use super::BlockGrouping;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryMode {
    Eager,
    Static,
}

impl std::str::FromStr for MemoryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eager" => Ok(MemoryMode::Eager),
            "static" => Ok(MemoryMode::Static),
            other => Err(Error::invalid(format!("unknown memory mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for MemoryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MemoryMode::Eager => "eager",
            MemoryMode::Static => "static",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryModel {
    pub mode: MemoryMode,
    /// Activation units stored per block (its input state), one per block.
    pub per_block_activation_units: Vec<f64>,
    pub fixed_overhead: f64,
}

impl MemoryModel {
    pub fn new(mode: MemoryMode, per_block_activation_units: Vec<f64>, fixed_overhead: f64) -> Result<Self> {
        if per_block_activation_units.is_empty() {
            return Err(Error::invalid("memory model needs at least one block"));
        }
        if per_block_activation_units.iter().any(|u| !(*u > 0.0 && u.is_finite())) {
            return Err(Error::invalid("activation units must be positive"));
        }
        if !(fixed_overhead >= 0.0 && fixed_overhead.is_finite()) {
            return Err(Error::invalid("fixed overhead must be non-negative"));
        }
        Ok(Self {
            mode,
            per_block_activation_units,
            fixed_overhead,
        })
    }

    pub fn uniform(mode: MemoryMode, depth: usize, units: f64, fixed_overhead: f64) -> Result<Self> {
        Self::new(mode, vec![units; depth], fixed_overhead)
    }

    /// Units from the state widths of a network (`n_t` for `t in 0..T`).
    pub fn for_network(mode: MemoryMode, net: &crate::network::Network, fixed_overhead: f64) -> Result<Self> {
        let units = (0..net.depth()).map(|t| net.state_dim(t) as f64).collect();
        Self::new(mode, units, fixed_overhead)
    }

    pub fn depth(&self) -> usize {
        self.per_block_activation_units.len()
    }

    fn window_sum(&self, start: usize, end: usize) -> f64 {
        self.per_block_activation_units[start..end].iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub units: f64,
    /// `h (T - h + 1)`, reported for static mode only.
    pub static_leading_term: Option<f64>,
}

pub fn memory_estimate(model: &MemoryModel, h: usize, depth: usize) -> Result<MemoryEstimate> {
    if model.depth() != depth {
        return Err(Error::dims(depth, model.depth(), "memory model block count"));
    }
    if h == 0 || h > depth {
        return Err(Error::OutOfRange {
            index: h,
            lo: 1,
            hi: depth,
            context: "memory horizon",
        });
    }
    Ok(match model.mode {
        MemoryMode::Eager => {
            let peak = (0..depth)
                .map(|t| model.window_sum(t, (t + h).min(depth)))
                .fold(0.0, f64::max);
            MemoryEstimate {
                units: model.fixed_overhead + peak,
                static_leading_term: None,
            }
        }
        MemoryMode::Static => {
            let total: f64 = (0..depth)
                .map(|t| model.window_sum(t, (t + h).min(depth)))
                .sum();
            MemoryEstimate {
                units: model.fixed_overhead + total,
                static_leading_term: Some((h * (depth - h + 1)) as f64),
            }
        }
    })
}

/// Memory of the two-stage LoCo windows over a grouping.
pub fn memory_estimate_grouped(model: &MemoryModel, grouping: &BlockGrouping) -> Result<MemoryEstimate> {
    if model.depth() != grouping.depth() {
        return Err(Error::dims(grouping.depth(), model.depth(), "memory model block count"));
    }
    let stages = grouping.stage_count();
    let windows = (0..stages).map(|s| model.window_sum(grouping.stage_state(s), grouping.stage_state((s + 2).min(stages))));
    Ok(match model.mode {
        MemoryMode::Eager => MemoryEstimate {
            units: model.fixed_overhead + windows.fold(0.0, f64::max),
            static_leading_term: None,
        },
        MemoryMode::Static => MemoryEstimate {
            units: model.fixed_overhead + windows.sum::<f64>(),
            static_leading_term: None,
        },
    })
}
