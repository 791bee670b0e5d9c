use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub command_line: Vec<String>,
    pub config_sha256: String,
    pub seed: u64,
    pub revision: String,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub outputs: Vec<PathBuf>,
    pub config: RunConfig,
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Package version plus the git commit of the working directory, if any.
pub fn revision() -> String {
    let git = std::process::Command::new("git")
        .args(["rev-parse", "--short=12", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into());
    format!("evovit {} (git {git})", env!("CARGO_PKG_VERSION"))
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            command_line: std::env::args().collect(),
            config_sha256: cfg.hash(),
            seed: cfg.train.seed,
            revision: revision(),
            started_unix: now_unix(),
            finished_unix: None,
            outputs: Vec::new(),
            config: cfg.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        crate::write_json(&dir.join("manifest.json"), self)
    }

    pub fn finish(&mut self, dir: &Path) -> Result<(), CliError> {
        self.finished_unix = Some(now_unix());
        self.write(dir)
    }
}
