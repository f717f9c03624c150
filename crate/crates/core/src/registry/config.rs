use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::state::HealthPolicy;
use crate::node::ConfigError;

/// Registry config file (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryConfig {
    #[serde(default = "default_id")]
    pub registry_id: String,
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advertise: Option<String>,
    #[serde(default)]
    pub peers: Vec<String>,
    #[serde(default)]
    pub denylist: Vec<String>,
    /// The nodes' report period; health thresholds are 3x and 10x this.
    #[serde(default = "default_report_ms")]
    pub report_period_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stale_after_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offline_after_ms: Option<u64>,
    #[serde(default = "default_sweep_ms")]
    pub sweep_period_ms: u64,
    #[serde(default = "default_sync_ms")]
    pub sync_period_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_path: Option<PathBuf>,
    #[serde(default = "default_debounce_ms")]
    pub persist_debounce_ms: u64,
    /// Static files served under `/ui`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<PathBuf>,
    #[serde(default = "default_relay_ms")]
    pub relay_timeout_ms: u64,
}

fn default_id() -> String {
    "registry".into()
}
fn default_listen() -> String {
    "127.0.0.1:8000".into()
}
fn default_report_ms() -> u64 {
    5_000
}
fn default_sweep_ms() -> u64 {
    1_000
}
fn default_sync_ms() -> u64 {
    5_000
}
fn default_debounce_ms() -> u64 {
    200
}
fn default_relay_ms() -> u64 {
    10_000
}

impl Default for RegistryConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl RegistryConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RegistryConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = self.policy();
        if self.report_period_ms == 0 || self.sweep_period_ms == 0 || self.sync_period_ms == 0 {
            return Err(ConfigError::Invalid("periods must be positive".into()));
        }
        if p.stale_after >= p.offline_after {
            return Err(ConfigError::Invalid("stale threshold must be below offline threshold".into()));
        }
        Ok(())
    }

    pub fn policy(&self) -> HealthPolicy {
        let mut p = HealthPolicy::for_period(Duration::from_millis(self.report_period_ms));
        if let Some(ms) = self.stale_after_ms {
            p.stale_after = Duration::from_millis(ms);
        }
        if let Some(ms) = self.offline_after_ms {
            p.offline_after = Duration::from_millis(ms);
        }
        p
    }

    pub fn endpoint(&self) -> String {
        self.advertise.clone().unwrap_or_else(|| self.listen.clone())
    }
}
