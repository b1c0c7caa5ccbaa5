//! Pipeline configuration: one TOML document plus environment overrides for
//! the HTTP backend credentials.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::explore::ExploreConfig;
use crate::gateway::{
    BackendHandle, HttpBackend, HttpBackendConfig, ScriptEntry, ScriptedBackend,
};

/// How a chat backend is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

/// Per-role backend configuration.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct BackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    /// Directory of `<stage>.<role>.json` script files (mock backends).
    #[serde(default)]
    pub scripts_dir: Option<PathBuf>,
    /// Endpoint base URL (http backends); `TOOLFORGE_API_BASE` overrides.
    #[serde(default)]
    pub base_url: Option<String>,
    /// Model name (http backends); `TOOLFORGE_MODEL` overrides.
    #[serde(default)]
    pub model: Option<String>,
}

/// How the executor answers calls during pipeline runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SimulatorKind {
    #[default]
    Deterministic,
    Llm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatorConfig {
    #[serde(default)]
    pub kind: SimulatorKind,
    #[serde(default = "default_sim_seed")]
    pub seed: u64,
}

fn default_sim_seed() -> u64 {
    7
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            kind: SimulatorKind::Deterministic,
            seed: default_sim_seed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeConfig {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub temperature: f64,
}

fn default_max_iterations() -> usize {
    12
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_iterations: default_max_iterations(),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineQuotas {
    pub i1: usize,
    pub i2: usize,
    pub i3: usize,
    #[serde(default = "default_refine_seed")]
    pub seed: u64,
}

fn default_refine_seed() -> u64 {
    13
}

impl Default for RefineQuotas {
    fn default() -> Self {
        RefineQuotas {
            i1: 10,
            i2: 10,
            i3: 5,
            seed: default_refine_seed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_swap_fraction")]
    pub swap_fraction: f64,
    #[serde(default = "default_eval_seed")]
    pub seed: u64,
}

fn default_swap_fraction() -> f64 {
    0.5
}

fn default_eval_seed() -> u64 {
    17
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            swap_fraction: default_swap_fraction(),
            seed: default_eval_seed(),
        }
    }
}

/// The full pipeline configuration document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Directory all data files live in; relative paths in the config file
    /// resolve against the config file's directory.
    pub workdir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_quality_threshold")]
    pub quality_threshold: u8,
    /// Verified-to-reflection record ratio in the SFT export.
    #[serde(default = "default_mix_ratio")]
    pub mix_ratio: f64,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendConfig>,
    #[serde(default)]
    pub simulator: SimulatorConfig,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub explore: ExploreConfig,
    #[serde(default)]
    pub refine: RefineQuotas,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_seed() -> u64 {
    7
}

fn default_quality_threshold() -> u8 {
    crate::querygate::DEFAULT_QUALITY_THRESHOLD
}

fn default_mix_ratio() -> f64 {
    10.0
}

impl PipelineConfig {
    /// Load a TOML config file; relative paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<PipelineConfig, StoreError> {
        let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: PipelineConfig =
            toml::from_str(&text).map_err(|e| StoreError::Config(e.to_string()))?;
        config.validate()?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if config.workdir.is_relative() {
            config.workdir = base.join(&config.workdir);
        }
        for backend in config.backends.values_mut() {
            if let Some(dir) = &backend.scripts_dir {
                if dir.is_relative() {
                    backend.scripts_dir = Some(config.workdir.join(dir));
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.mix_ratio <= 0.0 {
            return Err(StoreError::Config(format!(
                "mix_ratio must be positive, got {}",
                self.mix_ratio
            )));
        }
        if !(1..=10).contains(&self.quality_threshold) {
            return Err(StoreError::Config(format!(
                "quality_threshold must be in 1..=10, got {}",
                self.quality_threshold
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let body = toml::to_string_pretty(self).map_err(|e| StoreError::Config(e.to_string()))?;
        super::write_atomic(path, body.as_bytes())
    }

    /// Path of a data file inside the workdir.
    pub fn data_path(&self, name: &str) -> PathBuf {
        self.workdir.join(name)
    }

    /// Build the backend for `role` as used by `stage`.
    ///
    /// Mock backends load `<stage>.<role>.json` from the role's script
    /// directory; a missing script file yields an empty script that fails
    /// loudly on first use. HTTP backends honor the `TOOLFORGE_*` overrides.
    pub fn backend(&self, role: &str, stage: super::Stage) -> Result<BackendHandle, StoreError> {
        let cfg = self.backends.get(role).cloned().unwrap_or_default();
        match cfg.kind {
            BackendKind::Mock => {
                let dir = cfg
                    .scripts_dir
                    .clone()
                    .unwrap_or_else(|| self.workdir.join("scripts"));
                let file = dir.join(format!("{}.{role}.json", stage.name()));
                let entries: Vec<ScriptEntry> = if file.exists() {
                    let text = std::fs::read_to_string(&file).map_err(|source| StoreError::Io {
                        path: file.clone(),
                        source,
                    })?;
                    serde_json::from_str(&text).map_err(|e| StoreError::BadRecord {
                        path: file.clone(),
                        line: 0,
                        reason: e.to_string(),
                    })?
                } else {
                    Vec::new()
                };
                Ok(Arc::new(ScriptedBackend::new(
                    format!("{}.{role}", stage.name()),
                    entries,
                )))
            }
            BackendKind::Http => {
                let base = cfg.base_url.clone().unwrap_or_default();
                let model = cfg.model.clone().unwrap_or_else(|| "default".into());
                let http_cfg = HttpBackendConfig::new(base, model).apply_env();
                if http_cfg.base_url.is_empty() {
                    return Err(StoreError::Config(format!(
                        "backend `{role}` is http but has no base_url (set it or TOOLFORGE_API_BASE)"
                    )));
                }
                let backend =
                    HttpBackend::new(http_cfg).map_err(|e| StoreError::Config(e.to_string()))?;
                Ok(Arc::new(backend))
            }
        }
    }
}
