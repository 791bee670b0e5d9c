//! Run configuration file and command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use evovit::data::DatasetSpec;
use evovit::encoder::EncoderConfig;
use evovit::evolution::EvoConfig;
use evovit::training::TrainConfig;

use crate::CliError;

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

/// One JSON document with exactly these top-level keys.
///
/// `evo` and `train` fall back to their defaults field by field; `encoder` and
/// `dataset` are required; `output_dir` defaults to `runs/default`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub evo: EvoConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Hex SHA-256 of the resolved config serialized as compact JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.encoder.validate()?;
        self.evo.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// Sets `path` (dot-separated) inside `root`, creating objects on the way.
/// `raw` is parsed as JSON when possible and kept as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not KEY=VALUE")))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("override key {path:?} is not a dot path")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut keys = path.split('.').peekable();
    while let Some(key) = keys.next() {
        let obj = match node {
            Value::Object(map) => map,
            _ => return Err(CliError::Config(format!("override {path:?}: {key:?} is inside a non-object"))),
        };
        if keys.peek().is_none() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one key")
}

fn describe(e: serde_path_to_error::Error<serde_json::Error>) -> String {
    let path = e.path().to_string();
    let inner = e.into_inner();
    if path == "." {
        format!("{inner}")
    } else {
        format!("at `{path}`: {inner}")
    }
}

/// Reads `path`, applies overrides and the optional seed and output directory.
pub fn load(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: RunConfig = if overrides.is_empty() {
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), describe(e))))?
    } else {
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        serde_path_to_error::deserialize(value)
            .map_err(|e| CliError::Config(format!("{} with overrides: {}", path.display(), describe(e))))?
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o.to_path_buf();
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_paths() {
        let mut v = serde_json::json!({"evo": {"keep_ratio": 0.5}});
        apply_override(&mut v, "evo.keep_ratio=0.7").unwrap();
        apply_override(&mut v, "train.model=vanilla").unwrap();
        apply_override(&mut v, "evo.keep_ratio.x=1").unwrap_err();
        assert_eq!(v["evo"]["keep_ratio"], 0.7);
        assert_eq!(v["train"]["model"], "vanilla");
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "a..b=1").is_err());
    }
}
