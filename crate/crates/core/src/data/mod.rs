//! Labeled image datasets: seeded synthetic patterns, IDX files, PNM images.

pub mod idx;
pub mod pnm;
mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::encoder::Image;
use crate::error::{Error, Result};

pub use synthetic::{synthetic_dataset, SyntheticSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Config(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Index(format!("label {l} outside 0..{num_classes}")));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }
}

/// Train and held-out evaluation split.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub eval: Dataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Separate evaluation files; when absent the last `eval_fraction` of the
    /// training files is held out.
    #[serde(default)]
    pub eval_images: Option<PathBuf>,
    #[serde(default)]
    pub eval_labels: Option<PathBuf>,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    /// Number of classes; defaults to `max label + 1`.
    #[serde(default)]
    pub classes: Option<usize>,
}

fn default_eval_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Idx(IdxSpec),
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Splits> {
    match spec {
        DatasetSpec::Synthetic(s) => synthetic::synthetic_splits(s),
        DatasetSpec::Idx(s) => idx::load_splits(s),
    }
}
