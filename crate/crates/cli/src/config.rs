//! Run configuration: TOML (or JSON) files whose keys command-line flags override.

use std::path::Path;

use serde::{Deserialize, Serialize};

use ergl_core::ergodic::CompareConfig;
use ergl_core::experiment::{DataSpec, ModelSpec};
use ergl_core::shadowing::ShadowConfig;
use ergl_core::training::{LossSpec, TrainConfig};
use ergl_core::SystemSpec;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowSection {
    /// Pseudo-orbit length in steps.
    pub n: usize,
    /// Uniform noise added to truth pseudo-orbits (exact-model audits only).
    pub noise: f64,
    pub refine: ShadowConfig,
    /// Steps in the long reference orbit.
    pub reference_steps: usize,
    /// Threshold is this multiple of the truth-vs-truth baseline.
    pub threshold_factor: f64,
    pub threshold_samples: usize,
    pub spinup: usize,
}

impl Default for ShadowSection {
    fn default() -> Self {
        Self {
            n: 200,
            noise: 0.0,
            refine: ShadowConfig::default(),
            reference_steps: 50_000,
            threshold_factor: 3.0,
            threshold_samples: 5,
            spinup: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    /// Master seed; when set it replaces every per-section seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Directory holding `train.bin`/`test.bin` from `simulate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<String>,
    /// Models to evaluate or audit: `truth`, a checkpoint path or `label=path`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<String>,
    pub data: DataSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossSpec>,
    pub train: TrainConfig,
    pub evaluate: CompareConfig,
    pub shadow: ShadowSection,
}

/// Manifests can be fed back as configs; only their `config` field matters.
#[derive(Deserialize)]
struct ManifestConfig {
    config: RunConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let parsed = if value.get("config").is_some() && value.get("command").is_some() {
            serde_json::from_value::<ManifestConfig>(value).map(|m| m.config)
        } else {
            serde_json::from_value(value)
        };
        parsed.map_err(|e| CliError::Config(e.to_string()))
    }

    /// JSON when the extension is `.json`, TOML otherwise.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if is_json { Self::from_json(&text) } else { Self::from_toml(&text) };
        cfg.map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Pushes the master seed into every section.
    pub fn seeded(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.data.seed = seed;
            self.train.seed = seed;
            self.evaluate.seed = seed;
        }
        self
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(self.data.seed)
    }
}
