//! Closed-form multiply-accumulate counts.
//!
//! Only matrix products and the placeholder aggregation are counted; softmax,
//! layer norm, GELU and residual additions are element-wise and excluded.
//! Patch embedding and the classifier head are outside the per-layer counts.

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evolution::{keep_count, EvoConfig};

/// `4nC² + 2n²C`: four projections plus the two attention products.
pub fn msa_macs(n_tokens: u64, c: u64) -> u64 {
    4 * n_tokens * c * c + 2 * n_tokens * n_tokens * c
}

/// `8nC²` for a hidden width of `4C`.
pub fn ffn_macs(n_tokens: u64, c: u64) -> u64 {
    8 * n_tokens * c * c
}

/// One slow-fast layer over `n` patch tokens keeping `k`.
///
/// The slow path carries CLS, `k` informative tokens and the representative;
/// building the representative costs `(n - k) C`. With `k = n` the layer is
/// dense.
pub fn evo_layer_macs(n: u64, c: u64, k: u64) -> Result<u64> {
    if k == 0 || k > n {
        return Err(Error::Argument(format!("keep count {k} outside 1..={n}")));
    }
    if k == n {
        return Ok(msa_macs(n + 1, c) + ffn_macs(n + 1, c));
    }
    Ok(msa_macs(k + 2, c) + ffn_macs(k + 2, c) + (n - k) * c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub layer: usize,
    /// Patch tokens on the slow path (`N` for dense layers).
    pub kept: usize,
    pub msa_macs: u64,
    pub ffn_macs: u64,
    pub evo_overhead_macs: u64,
    pub total_macs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub unit: String,
    pub n_patches: usize,
    pub embed_dim: usize,
    pub layers: Vec<LayerFlops>,
    pub msa_macs: u64,
    pub ffn_macs: u64,
    pub evo_overhead_macs: u64,
    pub total_macs: u64,
    pub vanilla_total_macs: u64,
    /// `1 - total / vanilla_total`.
    pub reduction_fraction: f64,
}

/// Per-layer costs of the encoder blocks; `evo = None` gives the dense model.
pub fn flop_report(cfg: &EncoderConfig, evo: Option<&EvoConfig>) -> Result<FlopReport> {
    cfg.validate()?;
    if cfg.hidden() != 4 * cfg.embed_dim {
        return Err(Error::Config(format!(
            "cost model assumes an FFN width of 4C, config has {}",
            cfg.hidden()
        )));
    }
    if let Some(e) = evo {
        e.validate()?;
    }
    let n = cfg.n_patches();
    let (nu, c) = (n as u64, cfg.embed_dim as u64);
    let mut layers = Vec::with_capacity(cfg.depth);
    for layer in 0..cfg.depth {
        let kept = match evo {
            Some(e) if e.selects_at(layer) => keep_count(e.ratio(layer), n),
            _ => n,
        };
        let k = kept as u64;
        let slow = if k == nu { nu + 1 } else { k + 2 };
        let entry = LayerFlops {
            layer,
            kept,
            msa_macs: msa_macs(slow, c),
            ffn_macs: ffn_macs(slow, c),
            evo_overhead_macs: (nu - k) * c,
            total_macs: evo_layer_macs(nu, c, k)?,
        };
        layers.push(entry);
    }
    let sum = |f: fn(&LayerFlops) -> u64| layers.iter().map(f).sum::<u64>();
    let total = sum(|l| l.total_macs);
    let vanilla = cfg.depth as u64 * (msa_macs(nu + 1, c) + ffn_macs(nu + 1, c));
    Ok(FlopReport {
        unit: "multiply-accumulates; encoder blocks only, element-wise ops excluded".into(),
        n_patches: n,
        embed_dim: cfg.embed_dim,
        msa_macs: sum(|l| l.msa_macs),
        ffn_macs: sum(|l| l.ffn_macs),
        evo_overhead_macs: sum(|l| l.evo_overhead_macs),
        total_macs: total,
        vanilla_total_macs: vanilla,
        reduction_fraction: 1.0 - total as f64 / vanilla as f64,
        layers,
    })
}
