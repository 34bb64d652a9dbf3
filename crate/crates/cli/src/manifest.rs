//! Per-run manifests listing the effective config and every file written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ergl_core::training::{LossSpec, TrainConfig};
use ergl_core::SystemSpec;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// SHA-256 of the effective config serialized as JSON.
    pub config_hash: String,
    pub seed: u64,
    pub system: SystemSpec,
    pub loss: Option<LossSpec>,
    pub train: Option<TrainConfig>,
    pub config: RunConfig,
    pub reproducible: bool,
    pub threads: Option<usize>,
    /// Files read by the run.
    pub inputs: Vec<String>,
    pub artifacts: Vec<Artifact>,
    pub metrics: BTreeMap<String, f64>,
    pub started: String,
    pub finished: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash(cfg: &RunConfig) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Collects artifacts while a command writes into its output directory.
pub struct Outputs {
    pub dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Outputs {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.record(name, bytes);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(&self.path(name), e))?;
        self.write(name, text.as_bytes())
    }

    /// Registers a file written by other code.
    pub fn register(&mut self, name: &str) -> CliResult<()> {
        let path = self.path(name);
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        self.record(name, &bytes);
        Ok(())
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.artifacts.retain(|a| a.path != name);
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> CliResult<RunManifest> {
        manifest.artifacts = std::mem::take(&mut self.artifacts);
        manifest.finished = now();
        let path = self.path(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::io(&path, e))?;
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

pub fn load_manifest(path: &Path) -> CliResult<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
