//! Wall-clock forward throughput on one thread.
//!
//! Results are only comparable on a quiet machine; nothing here enforces that.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::encoder::{Image, ModelParams, EncoderConfig};
use crate::error::{Error, Result};
use crate::evolution::EvoConfig;
use crate::training::{forward_kind, ModelKind, Phase};
use crate::evolution::GlobalAttentionSelector;

pub const MIN_WARMUP: usize = 2;
pub const MIN_REPEATS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub model: ModelKind,
    pub batch: usize,
    pub warmup: usize,
    pub repeats: usize,
    /// Seconds per batch, in run order.
    pub latencies: Vec<f64>,
    pub p50_seconds: f64,
    pub p95_seconds: f64,
    pub images_per_sec: f64,
    pub tokens_per_sec: f64,
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

/// Times `repeats` forward passes over `batch` after `warmup` untimed ones.
pub fn throughput_bench(
    kind: ModelKind,
    params: &ModelParams,
    cfg: &EncoderConfig,
    evo: &EvoConfig,
    batch: &[Image],
    warmup: usize,
    repeats: usize,
) -> Result<BenchResult> {
    if warmup < MIN_WARMUP || repeats < MIN_REPEATS {
        return Err(Error::Argument(format!(
            "need at least {MIN_WARMUP} warmup and {MIN_REPEATS} timed runs, got {warmup} and {repeats}"
        )));
    }
    if batch.is_empty() {
        return Err(Error::Argument("empty benchmark batch".into()));
    }
    let run = || -> Result<f64> {
        let start = Instant::now();
        for image in batch {
            let tr = forward_kind(kind, image, params, cfg, evo, Phase::LayerWise, 1, &mut GlobalAttentionSelector)?;
            std::hint::black_box(&tr.logits_avg);
        }
        Ok(start.elapsed().as_secs_f64())
    };
    for _ in 0..warmup {
        run()?;
    }
    let latencies = (0..repeats).map(|_| run()).collect::<Result<Vec<_>>>()?;
    let p50 = percentile(&latencies, 50.0);
    let images_per_sec = batch.len() as f64 / p50;
    Ok(BenchResult {
        model: kind,
        batch: batch.len(),
        warmup,
        repeats,
        p50_seconds: p50,
        p95_seconds: percentile(&latencies, 95.0),
        images_per_sec,
        tokens_per_sec: images_per_sec * cfg.n_tokens() as f64,
        latencies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 95.0), 5.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
    }

    #[test]
    fn rejects_short_runs() {
        let cfg = EncoderConfig::new(8, 4, 1, 8, 2, 1, 2);
        let p = ModelParams::init(&cfg, &mut crate::numeric::RngState::new(1)).unwrap();
        let img = Image::zeros(8, 8, 1);
        let evo = EvoConfig::with_ratio(0.5, 2);
        assert!(throughput_bench(ModelKind::Vanilla, &p, &cfg, &evo, std::slice::from_ref(&img), 1, 5).is_err());
        let r = throughput_bench(ModelKind::Vanilla, &p, &cfg, &evo, &[img], 2, 5).unwrap();
        assert_eq!(r.latencies.len(), 5);
        assert!(r.p50_seconds <= r.p95_seconds);
    }
}
