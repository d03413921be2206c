use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, enough to replay the command.
    pub args: Vec<String>,
    pub config_path: Option<String>,
    /// Resolved configuration as TOML.
    pub config: String,
    pub dataset_fingerprint: String,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, config: String, seeds: Vec<u64>) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().collect(),
            config_path: config_path.map(|p| p.display().to_string()),
            config,
            dataset_fingerprint: String::new(),
            seeds,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: String::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.finished_at = chrono::Utc::now().to_rfc3339();
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&self)?).with_context(|| format!("writing {}", path.display()))
    }
}
