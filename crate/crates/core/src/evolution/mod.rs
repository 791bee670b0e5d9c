//! Token evolution: an evolving global class attention picks informative
//! tokens; those run the full block while the rest ride along on the
//! residuals of one representative token.

mod forward;
mod global;
mod select;

pub use forward::{
    evo_block_forward, forward_with_plans, model_forward_evo, model_forward_evo_with,
    EvoForward, EvoOutput, EvoRouter, GlobalAttentionSelector, ScheduleMode, SelectionContext,
    TokenSelector,
};
pub use global::{update_global_attention, GlobalClassAttention};
pub use select::{aggregate_placeholders, keep_count, normalized_weights, select_informative, SelectionResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Keep ratio shared by every selecting layer, or listed per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KeepRatio {
    Uniform(f64),
    PerLayer(Vec<f64>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    WeightedSum,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expansion {
    #[default]
    Copy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvoConfig {
    /// Fraction of patch tokens routed through the slow path.
    pub keep_ratio: KeepRatio,
    /// First layer (1-indexed) that selects tokens. Must be at least 2 so the
    /// global attention has been initialized by an earlier layer.
    pub start_layer: usize,
    /// Weight of the previous global attention in the moving average.
    pub alpha: f64,
    pub aggregation: Aggregation,
    pub expansion: Expansion,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            keep_ratio: KeepRatio::Uniform(0.5),
            start_layer: 5,
            alpha: 0.5,
            aggregation: Aggregation::WeightedSum,
            expansion: Expansion::Copy,
        }
    }
}

impl EvoConfig {
    pub fn with_ratio(ratio: f64, start_layer: usize) -> Self {
        EvoConfig {
            keep_ratio: KeepRatio::Uniform(ratio),
            start_layer,
            ..EvoConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_layer < 2 {
            return Err(Error::Config(format!(
                "start_layer {} must be >= 2 (layer 1 initializes the global attention)",
                self.start_layer
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        let check = |r: f64| {
            if r > 0.0 && r <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("keep ratio {r} outside (0, 1]")))
            }
        };
        match &self.keep_ratio {
            KeepRatio::Uniform(r) => check(*r),
            KeepRatio::PerLayer(rs) => rs.iter().try_for_each(|&r| check(r)),
        }
    }

    /// Keep ratio of 0-indexed `layer`; per-layer lists repeat their last entry.
    pub fn ratio(&self, layer: usize) -> f64 {
        match &self.keep_ratio {
            KeepRatio::Uniform(r) => *r,
            KeepRatio::PerLayer(rs) => rs
                .get(layer)
                .or(rs.last())
                .copied()
                .unwrap_or(1.0),
        }
    }

    /// Whether 0-indexed `layer` runs the slow-fast block.
    pub fn selects_at(&self, layer: usize) -> bool {
        layer + 1 >= self.start_layer
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = EvoConfig::default();
        c.validate().unwrap();
        assert_eq!(c.ratio(7), 0.5);
        assert!(!c.selects_at(3));
        assert!(c.selects_at(4));
        assert!(EvoConfig::with_ratio(0.0, 2).validate().is_err());
        assert!(EvoConfig::with_ratio(0.5, 1).validate().is_err());
        let per = EvoConfig {
            keep_ratio: KeepRatio::PerLayer(vec![1.0, 0.7, 0.5]),
            ..EvoConfig::default()
        };
        assert_eq!(per.ratio(1), 0.7);
        assert_eq!(per.ratio(10), 0.5);
    }

    #[test]
    fn config_json() {
        let c: EvoConfig = serde_json::from_str(r#"{"keep_ratio": 0.25, "start_layer": 2}"#).unwrap();
        assert_eq!(c.keep_ratio, KeepRatio::Uniform(0.25));
        assert_eq!(c.alpha, 0.5);
        assert!(serde_json::from_str::<EvoConfig>(r#"{"keep_ration": 0.25}"#).is_err());
    }
}
