use std::time::Duration;

use serde::Deserialize;
use serde_json::Value;

use super::{GossipError, DEFAULT_PORT, INITIAL_TTL};

#[derive(Debug, Clone, PartialEq)]
pub struct GossipConfig {
    pub node_id: String,
    pub host: String,
    pub port: u16,
    pub period: Duration,
    /// `host:port` of peers contacted at start.
    pub seed_nodes: Vec<String>,
    pub initial_ttl: u32,
    /// Silence, in periods, before a peer is suspected.
    pub suspect_periods: u32,
    pub dead_periods: u32,
    /// Age, in periods, after which a remote presence record is dropped.
    pub expire_periods: u32,
    pub cache_capacity: usize,
}

impl GossipConfig {
    pub fn new(node_id: impl Into<String>, host: impl Into<String>, port: u16) -> Self {
        GossipConfig {
            node_id: node_id.into(),
            host: host.into(),
            port,
            period: Duration::from_secs(1),
            seed_nodes: Vec::new(),
            initial_ttl: INITIAL_TTL,
            suspect_periods: 3,
            dead_periods: 10,
            expire_periods: 30,
            cache_capacity: 4096,
        }
    }

    pub fn with_seeds(mut self, seeds: impl IntoIterator<Item = String>) -> Self {
        self.seed_nodes = seeds.into_iter().collect();
        self
    }

    pub fn with_period(mut self, period: Duration) -> Self {
        self.period = period;
        self
    }

    pub fn address(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }

    pub fn suspect_after(&self) -> Duration {
        self.period * self.suspect_periods
    }

    pub fn dead_after(&self) -> Duration {
        self.period * self.dead_periods
    }

    pub fn expire_after(&self) -> Duration {
        self.period * self.expire_periods
    }

    /// Reads the `p2p` section of a node config file:
    /// `{"node_id": .., "gossip": {"host", "port", "period_ms", "seed_nodes"}}`.
    pub fn from_p2p(p2p: &Value) -> Result<Self, GossipError> {
        #[derive(Deserialize)]
        struct P2p {
            node_id: String,
            #[serde(default)]
            gossip: Section,
        }
        #[derive(Deserialize, Default)]
        struct Section {
            host: Option<String>,
            port: Option<u16>,
            period_ms: Option<u64>,
            #[serde(default)]
            seed_nodes: Vec<String>,
        }
        let p: P2p = serde_json::from_value(p2p.clone()).map_err(|e| GossipError::Config(e.to_string()))?;
        if p.node_id.is_empty() {
            return Err(GossipError::Config("p2p.node_id must be nonempty".into()));
        }
        let mut cfg = GossipConfig::new(
            p.node_id,
            p.gossip.host.unwrap_or_else(|| "127.0.0.1".into()),
            p.gossip.port.unwrap_or(DEFAULT_PORT),
        );
        if let Some(ms) = p.gossip.period_ms {
            if ms == 0 {
                return Err(GossipError::Config("p2p.gossip.period_ms must be positive".into()));
            }
            cfg.period = Duration::from_millis(ms);
        }
        cfg.seed_nodes = p.gossip.seed_nodes;
        Ok(cfg)
    }
}
