use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::time::Timestamp;
use crate::wire::{
    AgentHit, AgentIndexEntry, Health, NodeEntry, RegisterNodeParams, RegistrySnapshot, Shape, Violation,
};

#[derive(Debug, Clone, PartialEq)]
pub struct HealthPolicy {
    pub stale_after: Duration,
    pub offline_after: Duration,
}

impl HealthPolicy {
    /// 3 and 10 report periods.
    pub fn for_period(period: Duration) -> Self {
        HealthPolicy { stale_after: period * 3, offline_after: period * 10 }
    }

    pub fn classify(&self, silent: Duration) -> Health {
        if silent > self.offline_after {
            Health::Offline
        } else if silent > self.stale_after {
            Health::Stale
        } else {
            Health::Online
        }
    }
}

impl Default for HealthPolicy {
    fn default() -> Self {
        Self::for_period(Duration::from_secs(5))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HealthChange {
    pub node_id: String,
    pub from: Health,
    pub to: Health,
}

/// The registry's single-writer state. Every mutation bumps `version`.
#[derive(Debug, Clone)]
pub struct RegistryState {
    policy: HealthPolicy,
    denylist: HashSet<String>,
    entries: BTreeMap<String, NodeEntry>,
    index: BTreeMap<String, BTreeSet<String>>,
    version: u64,
}

/// Index eligibility: offline nodes drop out, stale ones stay.
fn indexed(entry: &NodeEntry) -> bool {
    entry.health != Health::Offline
}

impl RegistryState {
    pub fn new(policy: HealthPolicy, denylist: impl IntoIterator<Item = String>) -> Self {
        RegistryState {
            policy,
            denylist: denylist.into_iter().collect(),
            entries: BTreeMap::new(),
            index: BTreeMap::new(),
            version: 0,
        }
    }

    /// Rebuilds state from a saved snapshot; health is re-derived at `now`.
    pub fn restore(
        policy: HealthPolicy,
        denylist: impl IntoIterator<Item = String>,
        snapshot: RegistrySnapshot,
        now: Timestamp,
    ) -> Self {
        let mut st = Self::new(policy, denylist);
        for mut e in snapshot.nodes {
            st.strip_denied(&mut e);
            e.health = st.policy.classify(now.since(e.last_report));
            st.entries.insert(e.report.node_id.clone(), e);
        }
        st.version = snapshot.version;
        st.reindex();
        st
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn policy(&self) -> &HealthPolicy {
        &self.policy
    }

    pub fn entry(&self, node_id: &str) -> Option<&NodeEntry> {
        self.entries.get(node_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn strip_denied(&self, e: &mut NodeEntry) {
        let denied = |id: &String| self.denylist.contains(id);
        if e.report.available_agents.iter().any(denied) || e.agents.iter().any(|a| denied(&a.agent_id)) {
            e.report.available_agents.retain(|id| !denied(id));
            e.agents.retain(|a| !denied(&a.agent_id));
            e.flagged = true;
        }
    }

    fn reindex(&mut self) {
        let mut index: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (node_id, e) in self.entries.iter().filter(|(_, e)| indexed(e)) {
            for agent in &e.report.available_agents {
                index.entry(agent.clone()).or_default().insert(node_id.clone());
            }
        }
        self.index = index;
    }

    fn bump(&mut self) {
        self.version += 1;
        self.reindex();
    }

    /// Creates or refreshes the entry for the reporting node.
    pub fn register_node(&mut self, params: RegisterNodeParams, now: Timestamp) -> Result<u64, Vec<Violation>> {
        let violations = params.violations();
        if !violations.is_empty() {
            return Err(violations);
        }
        let node_id = params.report.node_id.clone();
        let first_seen = self.entries.get(&node_id).map_or(now, |e| e.first_seen.min(now));
        let mut entry = NodeEntry {
            report: params.report,
            address: params.address,
            first_seen,
            last_report: now,
            health: Health::Online,
            location: params.location,
            agents: params.agents,
            flagged: false,
        };
        self.strip_denied(&mut entry);
        self.entries.insert(node_id, entry);
        self.bump();
        Ok(self.version)
    }

    /// Re-derives every entry's health at `now`.
    pub fn health_sweep(&mut self, now: Timestamp) -> Vec<HealthChange> {
        let mut changes = Vec::new();
        for (node_id, e) in self.entries.iter_mut() {
            let h = self.policy.classify(now.since(e.last_report));
            if h != e.health {
                changes.push(HealthChange { node_id: node_id.clone(), from: e.health, to: h });
                e.health = h;
            }
        }
        if !changes.is_empty() {
            self.bump();
        }
        changes
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        RegistrySnapshot {
            version: self.version,
            nodes: self.entries.values().cloned().collect(),
            agents: self
                .index
                .iter()
                .map(|(id, nodes)| AgentIndexEntry { agent_id: id.clone(), node_ids: nodes.iter().cloned().collect() })
                .collect(),
        }
    }

    /// Exact agent id, then bare agent name, then capability tag. Sorted by
    /// (agent_id, node_id).
    pub fn lookup_agent(&self, query: &str) -> Vec<AgentHit> {
        let hit = |agent_id: &str, node_id: &str| AgentHit {
            agent_id: agent_id.to_string(),
            node_id: node_id.to_string(),
            address: self.entries[node_id].address.clone(),
        };
        if query.is_empty() {
            return Vec::new();
        }
        if let Some(nodes) = self.index.get(query) {
            return nodes.iter().map(|n| hit(query, n)).collect();
        }
        let by_name: Vec<AgentHit> = self
            .index
            .iter()
            .filter(|(id, _)| id.split_once('/').is_some_and(|(_, name)| name == query))
            .flat_map(|(id, nodes)| nodes.iter().map(|n| hit(id, n)))
            .collect();
        if !by_name.is_empty() {
            return by_name;
        }
        let mut by_tag: Vec<AgentHit> = self
            .entries
            .iter()
            .filter(|(_, e)| indexed(e))
            .flat_map(|(node_id, e)| {
                e.agents
                    .iter()
                    .filter(|a| a.description.iter().any(|t| t == query))
                    .filter(|a| e.report.available_agents.contains(&a.agent_id))
                    .map(move |a| hit(&a.agent_id, node_id))
            })
            .collect();
        by_tag.sort_by(|a, b| (&a.agent_id, &a.node_id).cmp(&(&b.agent_id, &b.node_id)));
        by_tag
    }

    /// Last-writer-wins merge of a peer's entries. Returns whether anything
    /// changed (and so whether the version moved).
    pub fn merge(&mut self, other: &RegistrySnapshot, now: Timestamp) -> bool {
        let mut changed = false;
        for incoming in &other.nodes {
            let mut incoming = incoming.clone();
            self.strip_denied(&mut incoming);
            incoming.health = self.policy.classify(now.since(incoming.last_report));
            let node_id = incoming.report.node_id.clone();
            match self.entries.get_mut(&node_id) {
                None => {
                    self.entries.insert(node_id, incoming);
                    changed = true;
                }
                Some(ours) => {
                    let first_seen = ours.first_seen.min(incoming.first_seen);
                    if wins(&incoming, ours) {
                        incoming.first_seen = first_seen;
                        *ours = incoming;
                        changed = true;
                    } else if ours.first_seen != first_seen {
                        ours.first_seen = first_seen;
                        changed = true;
                    }
                }
            }
        }
        if changed {
            self.bump();
        }
        changed
    }

    /// Digest of every entry except its (time-derived) health. Equal
    /// fingerprints mean equal registries.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for e in self.entries.values() {
            h.update(canonical(e));
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn canonical(e: &NodeEntry) -> Vec<u8> {
    let mut e = e.clone();
    e.health = Health::Online;
    serde_json::to_vec(&e).expect("entry serializes")
}

/// Newer `last_report` wins; exact ties fall back to the encoded bytes so
/// both sides pick the same entry.
fn wins(incoming: &NodeEntry, ours: &NodeEntry) -> bool {
    match incoming.last_report.cmp(&ours.last_report) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => canonical(incoming) > canonical(ours),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{AgentMetadata, NodeStatusReport, SystemInfo};
    use proptest::prelude::*;

    const PERIOD: Duration = Duration::from_secs(5);

    fn t(secs: i64) -> Timestamp {
        Timestamp::from_millis(1_700_000_000_000 + secs * 1000)
    }

    fn params(node: &str, agents: &[&str]) -> RegisterNodeParams {
        RegisterNodeParams {
            report: NodeStatusReport {
                node_id: node.into(),
                node_name: node.into(),
                timestamp: t(0),
                system_info: SystemInfo { cpu_percent: 23.4, memory_percent: 67.2, platform: "Linux".into() },
                available_agents: agents.iter().map(|a| a.to_string()).collect(),
            },
            address: format!("{node}:9000"),
            agents: agents.iter().map(|a| AgentMetadata::new(*a, vec![format!("tag_{}", a.len() % 3)], t(0))).collect(),
            location: None,
        }
    }

    fn state() -> RegistryState {
        RegistryState::new(HealthPolicy::for_period(PERIOD), [])
    }

    /// Union of available agents over non-offline entries, computed directly.
    fn oracle_index(st: &RegistryState) -> BTreeMap<String, BTreeSet<String>> {
        let mut m: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for e in st.snapshot().nodes {
            if e.health != Health::Offline {
                for a in e.report.available_agents {
                    m.entry(a).or_default().insert(e.report.node_id.clone());
                }
            }
        }
        m
    }

    fn index_of(snap: &RegistrySnapshot) -> BTreeMap<String, BTreeSet<String>> {
        snap.agents.iter().map(|a| (a.agent_id.clone(), a.node_ids.iter().cloned().collect())).collect()
    }

    #[test]
    fn empty_registry_has_version_zero() {
        let st = state();
        let snap = st.snapshot();
        assert_eq!(snap.version, 0);
        assert!(snap.nodes.is_empty() && snap.agents.is_empty());
        assert_eq!(st.snapshot().version, 0);
    }

    #[test]
    fn reregistration_updates_in_place() {
        let mut st = state();
        let v1 = st.register_node(params("n1", &["a/x"]), t(0)).unwrap();
        let v2 = st.register_node(params("n1", &["a/x", "a/y"]), t(1)).unwrap();
        assert!(v2 > v1);
        assert_eq!(st.len(), 1);
        assert_eq!(st.entry("n1").unwrap().first_seen, t(0));
        assert_eq!(st.lookup_agent("a/y").len(), 1);
    }

    #[test]
    fn invalid_report_rejected() {
        let mut st = state();
        let mut p = params("n1", &[]);
        p.report.system_info.cpu_percent = 140.0;
        let err = st.register_node(p, t(0)).unwrap_err();
        assert_eq!(err[0].path, "report.system_info.cpu_percent");
        assert_eq!(st.version(), 0);
    }

    #[test]
    fn health_follows_silence() {
        let mut st = state();
        st.register_node(params("n1", &["a/x"]), t(0)).unwrap();
        assert!(st.health_sweep(t(15)).is_empty());
        let c = st.health_sweep(t(16));
        assert_eq!(c, [HealthChange { node_id: "n1".into(), from: Health::Online, to: Health::Stale }]);
        assert_eq!(st.lookup_agent("a/x").len(), 1);
        st.health_sweep(t(51));
        assert_eq!(st.entry("n1").unwrap().health, Health::Offline);
        assert!(st.lookup_agent("a/x").is_empty());
        assert!(st.snapshot().agents.is_empty());
    }

    #[test]
    fn lookup_by_id_name_and_tag() {
        let mut st = state();
        st.register_node(params("n2", &["ex/academic_agent"]), t(0)).unwrap();
        st.register_node(params("n1", &["ex/academic_agent", "ex/b"]), t(0)).unwrap();
        let hits = st.lookup_agent("ex/academic_agent");
        assert_eq!(hits.iter().map(|h| h.node_id.as_str()).collect::<Vec<_>>(), ["n1", "n2"]);
        assert_eq!(hits[0].address, "n1:9000");
        assert_eq!(st.lookup_agent("academic_agent").len(), 2);
        let tag = format!("tag_{}", "ex/b".len() % 3);
        assert_eq!(st.lookup_agent(&tag)[0].agent_id, "ex/b");
        assert!(st.lookup_agent("nothing").is_empty());
    }

    #[test]
    fn denylisted_agent_never_surfaces() {
        let mut st = RegistryState::new(HealthPolicy::default(), ["bad/agent".to_string()]);
        st.register_node(params("n1", &["bad/agent", "ok/agent"]), t(0)).unwrap();
        let e = st.entry("n1").unwrap();
        assert!(e.flagged);
        let text = serde_json::to_string(&st.snapshot()).unwrap();
        assert!(!text.contains("bad/agent"));
        assert!(st.lookup_agent("bad/agent").is_empty());
    }

    #[test]
    fn disjoint_registries_converge() {
        let (mut a, mut b) = (state(), state());
        a.register_node(params("n1", &["x/a"]), t(0)).unwrap();
        b.register_node(params("n2", &["x/b"]), t(1)).unwrap();
        b.merge(&a.snapshot(), t(2));
        a.merge(&b.snapshot(), t(2));
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn newer_report_wins_both_ways() {
        let (mut a, mut b) = (state(), state());
        a.register_node(params("n1", &["x/old"]), t(0)).unwrap();
        b.register_node(params("n1", &["x/new"]), t(5)).unwrap();
        a.merge(&b.snapshot(), t(6));
        b.merge(&a.snapshot(), t(6));
        assert_eq!(a.entry("n1").unwrap().report.available_agents, ["x/new"]);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.entry("n1").unwrap().first_seen, t(0));
    }

    #[test]
    fn merging_own_snapshot_is_a_no_op() {
        let mut a = state();
        a.register_node(params("n1", &["x/a"]), t(0)).unwrap();
        let v = a.version();
        assert!(!a.merge(&a.snapshot(), t(1)));
        assert_eq!(a.version(), v);
    }

    #[test]
    fn restore_round_trips() {
        let mut a = state();
        a.register_node(params("n1", &["x/a"]), t(0)).unwrap();
        let bytes = crate::wire::encode_shape(&a.snapshot()).unwrap();
        let snap: RegistrySnapshot = crate::wire::decode_shape(&bytes).unwrap();
        let b = RegistryState::restore(HealthPolicy::for_period(PERIOD), [], snap, t(1));
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(b.version(), a.version());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Register { reg: usize, node: u8, agents: Vec<u8>, at: i64 },
        Sweep { reg: usize, at: i64 },
        Sync { from: usize, to: usize, at: i64 },
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0..2usize, 0..6u8, proptest::collection::vec(0..5u8, 0..4), 0..120i64)
                .prop_map(|(reg, node, agents, at)| Op::Register { reg, node, agents, at }),
            (0..2usize, 0..120i64).prop_map(|(reg, at)| Op::Sweep { reg, at }),
            (0..2usize, 0..2usize, 0..120i64).prop_map(|(from, to, at)| Op::Sync { from, to, at }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn index_matches_online_union(ops in proptest::collection::vec(op(), 1..30)) {
            let mut regs = [state(), RegistryState::new(HealthPolicy::for_period(PERIOD), ["x/4".to_string()])];
            let mut now = 0;
            for op in ops {
                let before: Vec<u64> = regs.iter().map(|r| r.version()).collect();
                let touched = match op {
                    Op::Register { reg, node, agents, at } => {
                        now = now.max(at);
                        let ids: Vec<String> = agents.iter().map(|a| format!("x/{a}")).collect();
                        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
                        regs[reg].register_node(params(&format!("n{node}"), &refs), t(now)).unwrap();
                        Some(reg)
                    }
                    Op::Sweep { reg, at } => {
                        now = now.max(at);
                        regs[reg].health_sweep(t(now));
                        None
                    }
                    Op::Sync { from, to, at } => {
                        now = now.max(at);
                        let snap = regs[from].snapshot();
                        regs[to].merge(&snap, t(now));
                        None
                    }
                };
                for (i, r) in regs.iter().enumerate() {
                    prop_assert!(r.version() >= before[i]);
                    let snap = r.snapshot();
                    prop_assert_eq!(index_of(&snap), oracle_index(r));
                    prop_assert_eq!(snap.version, r.version());
                }
                if let Some(reg) = touched {
                    prop_assert!(regs[reg].version() > before[reg]);
                }
                prop_assert!(!serde_json::to_string(&regs[1].snapshot()).unwrap().contains("x/4"));
            }
        }
    }
}
