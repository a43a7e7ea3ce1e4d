use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved.conf";

/// Written to `--out` before a command does any work.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Every setting the command runs with, defaults included.
    pub config: Value,
    pub seed: Option<u64>,
    /// Input paths and flags other than the config.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<PathBuf>,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.into(),
            config,
            seed,
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn input(mut self, key: &str, value: impl ToString) -> Self {
        self.inputs.insert(key.into(), value.to_string());
        self
    }

    pub fn artifact(mut self, path: PathBuf) -> Self {
        self.artifacts.push(path);
        self
    }

    /// Writes the manifest and, when given, the resolved flat config, which
    /// can be passed back through `--config` to repeat the run.
    pub fn write(&self, out: &Path, resolved: Option<&str>) -> anyhow::Result<()> {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        if let Some(text) = resolved {
            std::fs::write(out.join(RESOLVED_CONFIG_FILE), text)?;
        }
        Ok(())
    }
}
