//! Alternative token-selection rules for ablations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::block::attention_forward;
use crate::encoder::{model_forward_vanilla, EncoderConfig, Image, ModelParams};
use crate::error::{Error, Result};
use crate::evolution::{
    keep_count, model_forward_evo_with, select_informative, EvoConfig, EvoForward, ScheduleMode,
    SelectionContext, SelectionResult, TokenSelector,
};
use crate::numeric::{layer_norm_rows, Matrix, RngState, LN_EPS};
use crate::training::argmax;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    GlobalClassAttention,
    Random,
    LastClassAttention,
    AttentionColumnMean,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::GlobalClassAttention,
        StrategyKind::Random,
        StrategyKind::LastClassAttention,
        StrategyKind::AttentionColumnMean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::GlobalClassAttention => "global-class-attention",
            StrategyKind::Random => "random",
            StrategyKind::LastClassAttention => "last-class-attention",
            StrategyKind::AttentionColumnMean => "attention-column-mean",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown strategy {s:?}")))
    }
}

/// Mean of each patch column (column 0, the CLS key, is skipped).
pub fn column_mean_scores(attention: &Matrix) -> Result<Vec<f64>> {
    let m = attention.rows();
    if m < 2 || attention.cols() != m {
        return Err(Error::Argument(format!(
            "column-mean scores need a square attention matrix with at least 2 rows, got {}x{}",
            m,
            attention.cols()
        )));
    }
    let sums = attention.col_sums();
    Ok(sums[1..].iter().map(|s| s / m as f64).collect())
}

/// `k` patches drawn uniformly without replacement.
pub fn random_selection(n: usize, ratio: f64, rng: &mut RngState) -> Result<SelectionResult> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Argument(format!("keep ratio {ratio} outside (0, 1]")));
    }
    let k = keep_count(ratio, n);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut informative = order[..k].to_vec();
    let mut placeholder = order[k..].to_vec();
    informative.sort_unstable();
    placeholder.sort_unstable();
    Ok(SelectionResult {
        informative,
        placeholder,
        layer: 0,
    })
}

/// Selector for any [`StrategyKind`].
pub enum BaselineSelector {
    Global,
    Random(RngState),
    /// Final-layer class attention of an earlier dense pass, patch entries only.
    LastClassAttention(Option<Vec<f64>>),
    AttentionColumnMean,
}

impl BaselineSelector {
    pub fn new(kind: StrategyKind, seed: u64) -> Self {
        match kind {
            StrategyKind::GlobalClassAttention => BaselineSelector::Global,
            StrategyKind::Random => BaselineSelector::Random(RngState::new(seed)),
            StrategyKind::LastClassAttention => BaselineSelector::LastClassAttention(None),
            StrategyKind::AttentionColumnMean => BaselineSelector::AttentionColumnMean,
        }
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            BaselineSelector::Global => StrategyKind::GlobalClassAttention,
            BaselineSelector::Random(_) => StrategyKind::Random,
            BaselineSelector::LastClassAttention(_) => StrategyKind::LastClassAttention,
            BaselineSelector::AttentionColumnMean => StrategyKind::AttentionColumnMean,
        }
    }
}

impl TokenSelector for BaselineSelector {
    fn select(&mut self, ctx: &SelectionContext<'_>) -> Result<SelectionResult> {
        let n = ctx.global.scores.len();
        match self {
            BaselineSelector::Global => select_informative(&ctx.global.scores, ctx.ratio),
            BaselineSelector::Random(rng) => random_selection(n, ctx.ratio, rng),
            BaselineSelector::LastClassAttention(None) => Err(Error::State(
                "last-class-attention selection needs a completed first pass".into(),
            )),
            BaselineSelector::LastClassAttention(Some(scores)) => {
                if scores.len() != n {
                    return Err(Error::State(format!(
                        "recorded last-layer attention has {} entries, expected {n}",
                        scores.len()
                    )));
                }
                select_informative(scores, ctx.ratio)
            }
            BaselineSelector::AttentionColumnMean => {
                let lp = ctx.params;
                let h = layer_norm_rows(ctx.tokens, lp.norm1_gain.value.data(), lp.norm1_bias.value.data(), LN_EPS)?;
                let (_, trace) = attention_forward(&h, lp, ctx.heads)?;
                select_informative(&column_mean_scores(&trace.mean_attention())?, ctx.ratio)
            }
        }
    }
}

/// Layer-wise evo inference with `selector`.
///
/// Last-class-attention runs a dense pass first and selects from its final
/// layer's class attention at every selecting layer.
pub fn strategy_forward(
    selector: &mut BaselineSelector,
    image: &Image,
    params: &ModelParams,
    cfg: &EncoderConfig,
    evo: &EvoConfig,
) -> Result<EvoForward> {
    if let BaselineSelector::LastClassAttention(slot) = selector {
        let first = model_forward_vanilla(image, params, cfg, false)?;
        let last = first
            .record
            .class_attention
            .last()
            .ok_or_else(|| Error::State("model has no layers".into()))?;
        *slot = Some(last[1..].to_vec());
    }
    model_forward_evo_with(image, params, cfg, evo, ScheduleMode::LayerWise, selector)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyScore {
    pub strategy: StrategyKind,
    pub accuracy: f64,
    pub samples: usize,
}

/// Top-1 accuracy (pooled logits) of each strategy on `data`. Nothing is trained.
pub fn compare_strategies(
    kinds: &[StrategyKind],
    params: &ModelParams,
    cfg: &EncoderConfig,
    evo: &EvoConfig,
    data: &Dataset,
    seed: u64,
) -> Result<Vec<StrategyScore>> {
    if data.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    kinds
        .iter()
        .map(|&kind| {
            let mut selector = BaselineSelector::new(kind, seed);
            let mut correct = 0;
            for (image, &label) in data.images.iter().zip(&data.labels) {
                let fwd = strategy_forward(&mut selector, image, params, cfg, evo)?;
                correct += usize::from(argmax(&fwd.trace.logits_avg) == label);
            }
            Ok(StrategyScore {
                strategy: kind,
                accuracy: correct as f64 / data.len() as f64,
                samples: data.len(),
            })
        })
        .collect()
}
