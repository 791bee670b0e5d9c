use crate::encoder::{
    block_forward, forward_traced, AttentionRecord, BlockTrace, EncoderConfig, Image, LayerParams,
    LayerRouter, ModelParams, ModelTrace, SlowFastPlan, TokenSequence,
};
use crate::error::{Error, Result};
use crate::evolution::{normalized_weights, select_informative, EvoConfig, GlobalClassAttention, SelectionResult};
use crate::numeric::Matrix;

/// How often selection is recomputed among the selecting layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleMode {
    /// Every selecting layer picks its own tokens.
    LayerWise,
    /// Selection happens at stage entry layers (`start_layer`,
    /// `start_layer + stage_size`, ...) and is reused inside the stage.
    StageWise { stage_size: usize },
}

/// What a selector may look at when choosing tokens for `layer`.
pub struct SelectionContext<'a> {
    pub layer: usize,
    pub tokens: &'a Matrix,
    pub params: &'a LayerParams,
    pub heads: usize,
    pub global: &'a GlobalClassAttention,
    pub ratio: f64,
}

pub trait TokenSelector {
    fn select(&mut self, ctx: &SelectionContext<'_>) -> Result<SelectionResult>;
}

/// Top-k over the evolved global class attention.
pub struct GlobalAttentionSelector;

impl TokenSelector for GlobalAttentionSelector {
    fn select(&mut self, ctx: &SelectionContext<'_>) -> Result<SelectionResult> {
        select_informative(&ctx.global.scores, ctx.ratio)
    }
}

fn plan_for(sel: &SelectionResult, g: &GlobalClassAttention) -> Result<SlowFastPlan> {
    if !g.initialized {
        return Err(Error::State("selection before the global attention was initialized".into()));
    }
    let raw: Vec<f64> = sel.placeholder.iter().map(|&i| g.scores[i]).collect();
    Ok(SlowFastPlan {
        informative: sel.informative.clone(),
        placeholder: sel.placeholder.clone(),
        weights: normalized_weights(&raw),
    })
}

/// Partial global-attention update from a slow-fast block's class attention.
///
/// Only informative entries (and the CLS share) move; the representative
/// token's score is dropped.
fn absorb_slow_attention(
    g: &mut GlobalClassAttention,
    sel: &SelectionResult,
    trace: &BlockTrace,
    alpha: f64,
) -> Result<()> {
    let a = trace.class_attention();
    let mut full = vec![0.0; g.scores.len() + 1];
    full[0] = a[0];
    for (i, &inf) in sel.informative.iter().enumerate() {
        full[inf + 1] = a[i + 1];
    }
    g.update(&full, alpha, Some(&sel.informative))
}

/// Layer router driving the slow-fast blocks of a whole model.
pub struct EvoRouter<'a> {
    evo: &'a EvoConfig,
    mode: ScheduleMode,
    heads: usize,
    selector: &'a mut dyn TokenSelector,
    pub global: GlobalClassAttention,
    pub selections: Vec<SelectionResult>,
    /// Patch scores of the global attention after each layer.
    pub global_history: Vec<Vec<f64>>,
    stage_selection: Option<SelectionResult>,
    in_flight: Option<SelectionResult>,
}

impl<'a> EvoRouter<'a> {
    pub fn new(
        cfg: &EncoderConfig,
        evo: &'a EvoConfig,
        mode: ScheduleMode,
        selector: &'a mut dyn TokenSelector,
    ) -> Result<Self> {
        evo.validate()?;
        if let ScheduleMode::StageWise { stage_size: 0 } = mode {
            return Err(Error::Config("stage_size must be positive".into()));
        }
        Ok(EvoRouter {
            evo,
            mode,
            heads: cfg.heads,
            selector,
            global: GlobalClassAttention::new(cfg.n_patches()),
            selections: Vec::new(),
            global_history: Vec::new(),
            stage_selection: None,
            in_flight: None,
        })
    }

    fn is_stage_entry(&self, layer: usize) -> bool {
        match self.mode {
            ScheduleMode::LayerWise => true,
            ScheduleMode::StageWise { stage_size } => {
                (layer + 1 - self.evo.start_layer).is_multiple_of(stage_size)
            }
        }
    }
}

impl LayerRouter for EvoRouter<'_> {
    fn route(&mut self, layer: usize, tokens: &Matrix, lp: &LayerParams) -> Result<Option<SlowFastPlan>> {
        if !self.evo.selects_at(layer) {
            self.in_flight = None;
            return Ok(None);
        }
        let sel = match (&self.stage_selection, self.is_stage_entry(layer)) {
            (Some(prev), false) => prev.clone().at_layer(layer),
            _ => {
                let ctx = SelectionContext {
                    layer,
                    tokens,
                    params: lp,
                    heads: self.heads,
                    global: &self.global,
                    ratio: self.evo.ratio(layer),
                };
                let sel = self.selector.select(&ctx)?.at_layer(layer);
                self.stage_selection = Some(sel.clone());
                sel
            }
        };
        let plan = plan_for(&sel, &self.global)?;
        self.in_flight = Some(sel);
        Ok(Some(plan))
    }

    fn observe(&mut self, _layer: usize, trace: &BlockTrace) -> Result<()> {
        match self.in_flight.take() {
            None => self.global.update(&trace.class_attention(), self.evo.alpha, None)?,
            Some(sel) => {
                absorb_slow_attention(&mut self.global, &sel, trace, self.evo.alpha)?;
                self.selections.push(sel);
            }
        }
        self.global_history.push(self.global.scores.clone());
        Ok(())
    }
}

/// One slow-fast block driven by the global attention `g` carried in from
/// earlier layers. Returns the new tokens, the updated `g` and the selection.
pub fn evo_block_forward(
    x: &TokenSequence,
    g: &GlobalClassAttention,
    lp: &LayerParams,
    cfg: &EncoderConfig,
    evo: &EvoConfig,
    layer: usize,
) -> Result<(TokenSequence, GlobalClassAttention, SelectionResult)> {
    x.check()?;
    let sel = select_informative(&g.scores, evo.ratio(layer))?.at_layer(layer);
    let plan = plan_for(&sel, g)?;
    let (out, trace) = block_forward(&x.tokens, lp, cfg.heads, Some(plan))?;
    let mut g = g.clone();
    absorb_slow_attention(&mut g, &sel, &trace, evo.alpha)?;
    Ok((TokenSequence::new(out, x.n_patches)?, g, sel))
}

/// Traced evo forward, kept for backward passes and analysis.
#[derive(Clone, Debug)]
pub struct EvoForward {
    pub trace: ModelTrace,
    pub selections: Vec<SelectionResult>,
    pub global_history: Vec<Vec<f64>>,
}

impl EvoForward {
    pub fn output(&self, record: bool) -> EvoOutput {
        EvoOutput {
            logits_cls: self.trace.logits_cls.clone(),
            logits_avg: self.trace.logits_avg.clone(),
            record: self.trace.attention_record(record),
            selections: self.selections.clone(),
            global_history: self.global_history.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvoOutput {
    pub logits_cls: Vec<f64>,
    pub logits_avg: Vec<f64>,
    pub record: AttentionRecord,
    /// One entry per selecting layer.
    pub selections: Vec<SelectionResult>,
    pub global_history: Vec<Vec<f64>>,
}

/// Evo forward with an arbitrary selection strategy.
pub fn model_forward_evo_with(
    image: &Image,
    params: &ModelParams,
    cfg: &EncoderConfig,
    evo: &EvoConfig,
    mode: ScheduleMode,
    selector: &mut dyn TokenSelector,
) -> Result<EvoForward> {
    let mut router = EvoRouter::new(cfg, evo, mode, selector)?;
    let trace = forward_traced(image, params, cfg, &mut router)?;
    Ok(EvoForward {
        trace,
        selections: router.selections,
        global_history: router.global_history,
    })
}

/// Evo forward selecting by global class attention.
pub fn model_forward_evo(
    image: &Image,
    params: &ModelParams,
    cfg: &EncoderConfig,
    evo: &EvoConfig,
    mode: ScheduleMode,
) -> Result<EvoOutput> {
    let fwd = model_forward_evo_with(image, params, cfg, evo, mode, &mut GlobalAttentionSelector)?;
    Ok(fwd.output(false))
}

struct FixedPlans<'a>(&'a [Option<SlowFastPlan>]);

impl LayerRouter for FixedPlans<'_> {
    fn route(&mut self, layer: usize, _: &Matrix, _: &LayerParams) -> Result<Option<SlowFastPlan>> {
        self.0
            .get(layer)
            .cloned()
            .ok_or_else(|| Error::Argument(format!("no routing recorded for layer {layer}")))
    }
}

/// Replays recorded routings (selection and aggregation weights held fixed).
pub fn forward_with_plans(
    image: &Image,
    params: &ModelParams,
    cfg: &EncoderConfig,
    plans: &[Option<SlowFastPlan>],
) -> Result<ModelTrace> {
    forward_traced(image, params, cfg, &mut FixedPlans(plans))
}
