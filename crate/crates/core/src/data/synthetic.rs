use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Splits};
use crate::encoder::Image;
use crate::error::{Error, Result};
use crate::numeric::RngState;

/// Oriented-stripe "objects" on a noisy background.
///
/// Classes are split into two frequency bands, each with `ceil(classes / 2)`
/// evenly spaced orientations. Each image places one soft-edged disc of
/// stripes at a random position over a flat noisy background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Training samples.
    pub samples: usize,
    pub side: usize,
    pub seed: u64,
    /// Evaluation samples, drawn from a stream disjoint from training.
    /// Defaults to `samples / 4`.
    #[serde(default)]
    pub eval_samples: Option<usize>,
    /// Standard deviation of the additive pixel noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Channels per pixel (the pattern is repeated across channels).
    #[serde(default = "default_channels")]
    pub channels: usize,
}

fn default_noise() -> f64 {
    0.1
}

fn default_channels() -> usize {
    1
}

impl SyntheticSpec {
    pub fn new(classes: usize, samples: usize, side: usize, seed: u64) -> Self {
        SyntheticSpec {
            classes,
            samples,
            side,
            seed,
            eval_samples: None,
            noise: default_noise(),
            channels: default_channels(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.side < 2 || self.samples == 0 || self.channels == 0 {
            return Err(Error::Config(
                "synthetic dataset needs classes >= 2, side >= 2, samples >= 1, channels >= 1".into(),
            ));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config(format!("noise {} must be non-negative", self.noise)));
        }
        Ok(())
    }
}

const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

fn render(label: usize, spec: &SyntheticSpec, rng: &mut RngState) -> Image {
    let side = spec.side as f64;
    let n_orient = spec.classes.div_ceil(2);
    let band = label / n_orient;
    let step = PI / n_orient as f64;
    let theta = step * (label % n_orient) as f64 + rng.uniform_range(-0.1, 0.1) * step;
    let cycles = if band == 0 { 1.5 } else { 3.0 } * rng.uniform_range(0.9, 1.1);
    let phase = rng.uniform_range(-0.3, 0.3);
    let cx = rng.uniform_range(0.3, 0.7) * side;
    let cy = rng.uniform_range(0.3, 0.7) * side;
    let radius = rng.uniform_range(0.3, 0.45) * side;
    let amplitude = rng.uniform_range(0.3, 0.5);
    let background = rng.uniform_range(0.35, 0.65);
    let (s, c) = theta.sin_cos();

    let mut data = Vec::with_capacity(spec.side * spec.side * spec.channels);
    for y in 0..spec.side {
        for x in 0..spec.side {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let dist = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
            let inside = 1.0 / (1.0 + ((dist - radius) / 0.75).exp());
            let wave = (2.0 * PI * cycles * (px * c + py * s) / side + phase).sin();
            let v = background + inside * amplitude * wave + spec.noise * rng.normal();
            let v = v.clamp(0.0, 1.0);
            data.extend(std::iter::repeat_n(v, spec.channels));
        }
    }
    Image {
        height: spec.side,
        width: spec.side,
        channels: spec.channels,
        data,
    }
}

/// `count` samples with labels cycling `0, 1, .., classes - 1`.
pub fn synthetic_dataset(spec: &SyntheticSpec, count: usize, stream: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = RngState::derived(spec.seed, stream);
    let labels: Vec<usize> = (0..count).map(|i| i % spec.classes).collect();
    let images = labels.iter().map(|&l| render(l, spec, &mut rng)).collect();
    Dataset::new(images, labels, spec.classes)
}

pub(crate) fn synthetic_splits(spec: &SyntheticSpec) -> Result<Splits> {
    let n_eval = spec.eval_samples.unwrap_or(spec.samples / 4).max(1);
    Ok(Splits {
        train: synthetic_dataset(spec, spec.samples, TRAIN_STREAM)?,
        eval: synthetic_dataset(spec, n_eval, EVAL_STREAM)?,
    })
}
