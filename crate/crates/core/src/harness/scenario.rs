use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Every node registers with every registry; overlays hang off node 0.
    StarViaRegistry,
    /// Node i bootstraps from node i-1.
    LineBootstrap,
    /// Node i bootstraps from every earlier node.
    FullBootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Real,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultAction {
    Kill,
    Partition,
    Heal,
}

/// `target` is `node-3` for kill/heal, a range `node-0..node-9` for
/// partition (that range against the rest), or `*` for heal-everything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub at_ms: u64,
    pub action: FaultAction,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultTarget {
    Node(usize),
    Range(RangeInclusive<usize>),
    All,
}

impl FaultSpec {
    pub fn target(&self) -> Result<FaultTarget, HarnessError> {
        let bad = || HarnessError::Spec(format!("bad fault target {:?}", self.target));
        let node = |s: &str| s.strip_prefix("node-").and_then(|n| n.parse::<usize>().ok());
        if self.target == "*" {
            return Ok(FaultTarget::All);
        }
        if let Some((a, b)) = self.target.split_once("..") {
            let (a, b) = (node(a).ok_or_else(bad)?, node(b).ok_or_else(bad)?);
            return if a <= b { Ok(FaultTarget::Range(a..=b)) } else { Err(bad()) };
        }
        node(&self.target).map(FaultTarget::Node).ok_or_else(bad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub node_count: usize,
    #[serde(default = "one")]
    pub registry_count: usize,
    pub topology: Topology,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "simulated")]
    pub clock: ClockMode,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    /// Node report period; also the gossip period in simulations.
    #[serde(default = "default_period")]
    pub report_period_ms: u64,
    /// Bind real sockets instead of the in-process loopback.
    #[serde(default)]
    pub sockets: bool,
    /// With sockets: registries bind `base_port + i`, nodes
    /// `base_port + registry_count + i` (TCP and UDP). Unset means ephemeral.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_port: Option<u16>,
}

fn one() -> usize {
    1
}
fn simulated() -> ClockMode {
    ClockMode::Simulated
}
fn default_period() -> u64 {
    1_000
}

pub fn node_name(i: usize) -> String {
    format!("node-{i}")
}

pub fn registry_name(i: usize) -> String {
    format!("registry-{i}")
}

impl ScenarioSpec {
    pub fn new(node_count: usize, registry_count: usize, topology: Topology, seed: u64) -> Self {
        ScenarioSpec {
            node_count,
            registry_count,
            topology,
            seed,
            clock: ClockMode::Simulated,
            faults: Vec::new(),
            report_period_ms: default_period(),
            sockets: false,
            base_port: None,
        }
    }

    pub fn with_fault(mut self, at_ms: u64, action: FaultAction, target: &str) -> Self {
        self.faults.push(FaultSpec { at_ms, action, target: target.into() });
        self
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Spec(format!("{}: {e}", path.display())))?;
        let spec: ScenarioSpec = serde_json::from_str(&text).map_err(|e| HarnessError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.node_count == 0 {
            return Err(HarnessError::Spec("node_count must be at least 1".into()));
        }
        if self.topology == Topology::StarViaRegistry && self.registry_count == 0 {
            return Err(HarnessError::Spec("star-via-registry needs a registry".into()));
        }
        if self.report_period_ms == 0 {
            return Err(HarnessError::Spec("report_period_ms must be positive".into()));
        }
        if self.sockets && self.clock == ClockMode::Simulated {
            return Err(HarnessError::Spec("real sockets need the real clock".into()));
        }
        if self.sockets && !self.faults.is_empty() {
            return Err(HarnessError::Spec("fault schedules run in-process only".into()));
        }
        for f in &self.faults {
            let in_range = |i: usize| i < self.node_count;
            match (f.action, f.target()?) {
                (FaultAction::Partition, FaultTarget::Range(r)) if in_range(*r.end()) => {}
                (FaultAction::Partition, _) => {
                    return Err(HarnessError::Spec(format!(
                        "partition needs an in-range node span, got {:?}",
                        f.target
                    )))
                }
                (_, FaultTarget::Node(i)) if !in_range(i) => {
                    return Err(HarnessError::Spec(format!("fault target {:?} out of range", f.target)))
                }
                (FaultAction::Kill, FaultTarget::Node(_)) | (FaultAction::Heal, _) => {}
                (FaultAction::Kill, _) => return Err(HarnessError::Spec("kill takes a single node".into())),
            }
        }
        Ok(())
    }

    /// Faults ordered by time, stable for equal times.
    pub fn schedule(&self) -> Vec<FaultSpec> {
        let mut f = self.faults.clone();
        f.sort_by_key(|f| f.at_ms);
        f
    }

    /// Bootstrap peers of node `i` under this topology.
    pub fn seeds_of(&self, i: usize) -> Vec<usize> {
        match self.topology {
            Topology::StarViaRegistry => {
                if i == 0 {
                    Vec::new()
                } else {
                    vec![0]
                }
            }
            Topology::LineBootstrap => i.checked_sub(1).into_iter().collect(),
            Topology::FullBootstrap => (0..i).collect(),
        }
    }
}
