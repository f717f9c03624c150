use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gossip::GossipConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DhtSection {
    /// UDP address for DHT traffic.
    pub listen: String,
    #[serde(default)]
    pub bootstrap: Vec<String>,
}

/// Node config file (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<String>,
    /// HTTP address serving `/rpc`.
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Address other nodes should use, when it differs from `listen`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advertise: Option<String>,
    #[serde(default)]
    pub registries: Vec<String>,
    #[serde(default)]
    pub standalone: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dht: Option<DhtSection>,
    /// `{"node_id", "gossip": {"host", "port", "period_ms", "seed_nodes"}}`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p2p: Option<Value>,
    /// Built-in agents to host, by short name.
    #[serde(default = "default_agents")]
    pub agents: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default = "default_report_ms")]
    pub report_period_ms: u64,
    #[serde(default = "default_delegation_ms")]
    pub delegation_timeout_ms: u64,
    #[serde(default = "default_max_hops")]
    pub max_hops: u32,
    /// Namespace assumed for bare recipient names in DHT lookups.
    #[serde(default = "default_namespace")]
    pub default_namespace: String,
    #[serde(default = "default_grace_ms")]
    pub shutdown_grace_ms: u64,
}

fn default_listen() -> String {
    "127.0.0.1:9000".into()
}
fn default_agents() -> Vec<String> {
    vec!["echo_agent".into(), "math_agent".into(), "stats_agent".into()]
}
fn default_report_ms() -> u64 {
    5_000
}
fn default_delegation_ms() -> u64 {
    10_000
}
fn default_max_hops() -> u32 {
    2
}
fn default_namespace() -> String {
    "example".into()
}
fn default_grace_ms() -> u64 {
    5_000
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {0}: {1}")]
    Io(String, std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl NodeConfig {
    pub fn new(node_name: impl Into<String>) -> Self {
        serde_json::from_value(serde_json::json!({"node_name": node_name.into(), "standalone": true}))
            .expect("defaults deserialize")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: NodeConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.node_name.is_empty() {
            return Err(ConfigError::Invalid("node_name must be nonempty".into()));
        }
        let has_dht_seed = self.dht.as_ref().is_some_and(|d| !d.bootstrap.is_empty());
        let has_gossip_seed = self.gossip()?.is_some_and(|g| !g.seed_nodes.is_empty());
        if self.registries.is_empty() && !has_dht_seed && !has_gossip_seed && !self.standalone {
            return Err(ConfigError::Invalid(
                "need at least one registry, a dht/gossip bootstrap peer, or \"standalone\": true".into(),
            ));
        }
        if self.report_period_ms == 0 || self.delegation_timeout_ms == 0 {
            return Err(ConfigError::Invalid("periods and timeouts must be positive".into()));
        }
        Ok(())
    }

    pub fn node_id(&self) -> String {
        self.node_id
            .clone()
            .or_else(|| self.p2p.as_ref()?.get("node_id")?.as_str().map(str::to_string))
            .unwrap_or_else(|| self.node_name.clone())
    }

    pub fn endpoint(&self) -> String {
        self.advertise.clone().unwrap_or_else(|| self.listen.clone())
    }

    pub fn gossip(&self) -> Result<Option<GossipConfig>, ConfigError> {
        match &self.p2p {
            None => Ok(None),
            Some(v) => GossipConfig::from_p2p(v).map(Some).map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }

    pub fn report_period(&self) -> Duration {
        Duration::from_millis(self.report_period_ms)
    }

    pub fn delegation_timeout(&self) -> Duration {
        Duration::from_millis(self.delegation_timeout_ms)
    }

    pub fn shutdown_grace(&self) -> Duration {
        Duration::from_millis(self.shutdown_grace_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_standalone_config() {
        let cfg = NodeConfig::from_json(r#"{"node_name": "aios-compute-1", "standalone": true}"#).unwrap();
        assert_eq!(cfg.listen, "127.0.0.1:9000");
        assert_eq!(cfg.agents.len(), 3);
        assert_eq!(cfg.node_id(), "aios-compute-1");
        assert_eq!(cfg.delegation_timeout(), Duration::from_secs(10));
    }

    #[test]
    fn needs_somewhere_to_register() {
        let err = NodeConfig::from_json(r#"{"node_name": "n"}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        assert!(NodeConfig::from_json(r#"{"node_name": "n", "registries": ["127.0.0.1:8500"]}"#).is_ok());
        assert!(NodeConfig::from_json(
            r#"{"node_name": "n", "dht": {"listen": "127.0.0.1:9100", "bootstrap": ["127.0.0.1:9101"]}}"#
        )
        .is_ok());
    }

    #[test]
    fn node_id_falls_back_through_p2p() {
        let cfg = NodeConfig::from_json(
            r#"{"node_name": "n", "p2p": {"node_id": "Node_42", "gossip": {"seed_nodes": ["127.0.0.1:8002"]}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.node_id(), "Node_42");
        assert_eq!(cfg.gossip().unwrap().unwrap().port, 8001);
    }
}
