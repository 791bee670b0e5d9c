//! From-scratch training: assisted CLS loss, layer-to-stage schedule, Adam.

mod adam;
mod schedule;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use schedule::{schedule_mode, switch_epoch, Phase};

use crate::data::Dataset;
use crate::encoder::{backward, forward_traced, DenseRouter, EncoderConfig, Image, ModelParams, ModelTrace};
use crate::error::{Error, Result};
use crate::evolution::{model_forward_evo_with, EvoConfig, GlobalAttentionSelector, TokenSelector};
use crate::numeric::{cross_entropy_backward, cross_entropy_logits, Matrix, ParamSet, RngState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Vanilla,
    Evo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Layers per stage in the stage-wise phase.
    pub stage_size: usize,
    /// Fraction of epochs trained layer-wise before switching to stage-wise.
    pub layer_to_stage_switch: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Evo,
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            stage_size: 4,
            layer_to_stage_switch: 2.0 / 3.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.stage_size == 0 {
            return Err(Error::Config("epochs, batch_size and stage_size must be positive".into()));
        }
        if !(self.layer_to_stage_switch > 0.0 && self.layer_to_stage_switch <= 1.0) {
            return Err(Error::Config(format!(
                "layer_to_stage_switch {} outside (0, 1]",
                self.layer_to_stage_switch
            )));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning_rate and weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// The two loss terms and their unweighted sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub cls_term: f64,
    pub avg_term: f64,
    pub total: f64,
}

/// Cross-entropy on the CLS logits plus cross-entropy on the pooled logits.
pub fn assisted_cls_loss(logits_cls: &Matrix, logits_avg: &Matrix, labels: &[usize]) -> Result<LossBreakdown> {
    if logits_cls.shape() != logits_avg.shape() {
        return Err(Error::dim("assisted_cls_loss", logits_cls.shape(), logits_avg.shape()));
    }
    let cls_term = cross_entropy_logits(logits_cls, labels)?;
    let avg_term = cross_entropy_logits(logits_avg, labels)?;
    Ok(LossBreakdown {
        cls_term,
        avg_term,
        total: cls_term + avg_term,
    })
}

/// One forward pass of either model kind, traced for backward.
pub fn forward_kind(
    kind: ModelKind,
    image: &Image,
    params: &ModelParams,
    cfg: &EncoderConfig,
    evo: &EvoConfig,
    phase: Phase,
    stage_size: usize,
    selector: &mut dyn TokenSelector,
) -> Result<ModelTrace> {
    match kind {
        ModelKind::Vanilla => forward_traced(image, params, cfg, &mut DenseRouter),
        ModelKind::Evo => Ok(model_forward_evo_with(
            image,
            params,
            cfg,
            evo,
            phase.schedule(stage_size),
            selector,
        )?
        .trace),
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Top-1 accuracy from the pooled logits only (CLS logits are not consulted).
///
/// Work is split across up to `threads` scoped threads; each sample is
/// scored independently so the result does not depend on the split.
pub fn evaluate(
    kind: ModelKind,
    params: &ModelParams,
    cfg: &EncoderConfig,
    evo: &EvoConfig,
    phase: Phase,
    stage_size: usize,
    data: &Dataset,
    threads: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    let predict = |idx: &[usize]| -> Result<usize> {
        let mut correct = 0;
        for &i in idx {
            let tr = forward_kind(kind, &data.images[i], params, cfg, evo, phase, stage_size, &mut GlobalAttentionSelector)?;
            correct += usize::from(argmax(&tr.logits_avg) == data.labels[i]);
        }
        Ok(correct)
    };
    let all: Vec<usize> = (0..data.len()).collect();
    let threads = threads.clamp(1, data.len());
    let correct = if threads == 1 {
        predict(&all)?
    } else {
        let chunk = data.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = all.chunks(chunk).map(|c| s.spawn(move || predict(c))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation thread panicked"))
                .sum::<Result<usize>>()
        })?
    };
    Ok(correct as f64 / data.len() as f64)
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mode: String,
    pub loss: f64,
    pub acc_train: f64,
    pub acc_eval: f64,
    pub seconds: f64,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub metrics: Vec<EpochMetrics>,
}

const INIT_STREAM: u64 = 0x1A17;
const SHUFFLE_STREAM: u64 = 0x5AF1;

/// Trains `cfg.model` from scratch on `train`, scoring `eval` after each epoch.
///
/// `sink` sees every epoch record as soon as it is produced. A non-finite loss
/// aborts with a numeric error naming the epoch and step.
pub fn train(
    enc: &EncoderConfig,
    evo: &EvoConfig,
    cfg: &TrainConfig,
    train_set: &Dataset,
    eval_set: &Dataset,
    threads: usize,
    sink: &mut dyn FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    enc.validate()?;
    cfg.validate()?;
    if cfg.model == ModelKind::Evo {
        evo.validate()?;
    }
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if train_set.num_classes > enc.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model head has {}",
            train_set.num_classes, enc.num_classes
        )));
    }
    let mut params = ModelParams::init(enc, &mut RngState::derived(cfg.seed, INIT_STREAM))?;
    let mut adam = Adam::new(&params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    let mut shuffle = RngState::derived(cfg.seed, SHUFFLE_STREAM);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let phase = schedule_mode(epoch, cfg.epochs, cfg.layer_to_stage_switch)?;
        shuffle.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            params.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let label = train_set.labels[i];
                let tr = forward_kind(
                    cfg.model,
                    &train_set.images[i],
                    &params,
                    enc,
                    evo,
                    phase,
                    cfg.stage_size,
                    &mut GlobalAttentionSelector,
                )?;
                let lc = Matrix::row_vector(&tr.logits_cls);
                let la = Matrix::row_vector(&tr.logits_avg);
                let loss = assisted_cls_loss(&lc, &la, &[label])?;
                batch_loss += loss.total;
                correct += usize::from(argmax(&tr.logits_avg) == label);
                let dc = cross_entropy_backward(&lc, &[label])?.scale(scale);
                let da = cross_entropy_backward(&la, &[label])?.scale(scale);
                backward(&tr, &mut params, dc.data(), da.data())?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            loss_sum += batch_loss;
            adam.step(&mut params, cfg.learning_rate)?;
        }
        let acc_eval = evaluate(cfg.model, &params, enc, evo, phase, cfg.stage_size, eval_set, threads)?;
        let record = EpochMetrics {
            epoch,
            mode: match cfg.model {
                ModelKind::Vanilla => "dense".to_string(),
                ModelKind::Evo => phase.as_str().to_string(),
            },
            loss: loss_sum / train_set.len() as f64,
            acc_train: correct as f64 / train_set.len() as f64,
            acc_eval,
            seconds: start.elapsed().as_secs_f64(),
        };
        sink(&record)?;
        metrics.push(record);
    }
    Ok(TrainOutcome { params, metrics })
}
