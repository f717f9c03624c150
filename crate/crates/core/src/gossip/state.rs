use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::{IteratorRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::debug;

use super::cache::{MessageCache, MessageKey};
use super::config::GossipConfig;
use super::{fanout_targets, kinds, GossipError};
use crate::time::Timestamp;
use crate::wire::{parse_agent_id, GossipMessage, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PeerState {
    Alive,
    Suspect,
    Dead,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeerRecord {
    /// Learned from the peer's own messages; unknown for a seed not yet heard.
    pub node_id: Option<String>,
    pub ip: String,
    pub port: u16,
    pub state: PeerState,
    pub last_heard: Timestamp,
}

impl PeerRecord {
    pub fn addr(&self) -> String {
        format!("{}:{}", self.ip, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceRecord {
    pub agent_id: String,
    pub capabilities: Vec<String>,
    pub node_id: String,
    pub last_seen: Timestamp,
    /// RPC endpoint of the hosting node, when it advertises one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

/// One datagram to send.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub to: String,
    pub msg: GossipMessage,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Receipt {
    Applied(Vec<Outgoing>),
    /// Fresh but of a type this node does not understand; cached and forwarded.
    Unrecognized(Vec<Outgoing>),
    Duplicate,
}

impl Receipt {
    pub fn sends(&self) -> &[Outgoing] {
        match self {
            Receipt::Applied(s) | Receipt::Unrecognized(s) => s,
            Receipt::Duplicate => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub peer: String,
    pub from: PeerState,
    pub to: PeerState,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickReport {
    pub transitions: Vec<Transition>,
    /// Agent ids whose remote presence records aged out.
    pub expired: Vec<String>,
    pub sends: Vec<Outgoing>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentAd {
    agent_id: String,
    #[serde(default)]
    capabilities: Vec<String>,
}

pub(crate) fn split_addr(addr: &str) -> Option<(String, u16)> {
    let (host, port) = addr.rsplit_once(':')?;
    let port: u16 = port.parse().ok()?;
    (!host.is_empty() && port != 0).then(|| (host.to_string(), port))
}

pub struct GossipState {
    cfg: GossipConfig,
    me: String,
    endpoint: Option<String>,
    peers: BTreeMap<String, PeerRecord>,
    directory: BTreeMap<String, PresenceRecord>,
    local: BTreeSet<String>,
    departed: HashMap<String, Timestamp>,
    cache: MessageCache,
    rng: ChaCha8Rng,
    last_stamp: Option<Timestamp>,
}

impl GossipState {
    pub fn new(cfg: GossipConfig, seed: u64, now: Timestamp) -> Result<Self, GossipError> {
        let me = cfg.address();
        let mut state = GossipState {
            me,
            endpoint: None,
            peers: BTreeMap::new(),
            directory: BTreeMap::new(),
            local: BTreeSet::new(),
            departed: HashMap::new(),
            cache: MessageCache::new(cfg.cache_capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_stamp: None,
            cfg,
        };
        for seed in state.cfg.seed_nodes.clone() {
            if split_addr(&seed).is_none() {
                return Err(GossipError::Config(format!("seed {seed:?} is not host:port")));
            }
            state.add_peer(&seed, now);
        }
        Ok(state)
    }

    pub fn config(&self) -> &GossipConfig {
        &self.cfg
    }

    pub fn node_id(&self) -> &str {
        &self.cfg.node_id
    }

    pub fn address(&self) -> &str {
        &self.me
    }

    /// RPC endpoint advertised alongside this node's agents.
    pub fn set_endpoint(&mut self, endpoint: Option<String>) {
        self.endpoint = endpoint;
    }

    /// Adds an ALIVE peer unless it is already known or is this node.
    pub fn add_peer(&mut self, addr: &str, now: Timestamp) -> bool {
        if addr == self.me || self.peers.contains_key(addr) {
            return false;
        }
        let Some((ip, port)) = split_addr(addr) else { return false };
        self.peers
            .insert(addr.to_string(), PeerRecord { node_id: None, ip, port, state: PeerState::Alive, last_heard: now });
        true
    }

    pub fn peer(&self, addr: &str) -> Option<&PeerRecord> {
        self.peers.get(addr)
    }

    pub fn peers(&self) -> impl Iterator<Item = &PeerRecord> {
        self.peers.values()
    }

    /// Addresses of every peer not marked DEAD.
    pub fn live_peers(&self) -> Vec<String> {
        self.peers.values().filter(|p| p.state != PeerState::Dead).map(PeerRecord::addr).collect()
    }

    pub fn cache(&self) -> &MessageCache {
        &self.cache
    }

    fn stamp(&mut self, now: Timestamp) -> Timestamp {
        let t = match self.last_stamp {
            Some(last) if now <= last => last.next_tick(),
            _ => now,
        };
        self.last_stamp = Some(t);
        t
    }

    fn presence_data(&self, agents: &[&String]) -> Params {
        let ads: Vec<Value> = agents
            .iter()
            .filter_map(|id| self.directory.get(*id))
            .map(|r| json!({"agent_id": r.agent_id, "capabilities": r.capabilities}))
            .collect();
        let mut data = Params::new();
        data.insert("address".into(), json!(self.me));
        if let Some(ep) = &self.endpoint {
            data.insert("endpoint".into(), json!(ep));
        }
        data.insert("agents".into(), Value::Array(ads));
        data
    }

    fn originate(&mut self, message_type: &str, data: Params, now: Timestamp) -> GossipMessage {
        let msg = GossipMessage {
            sender_id: self.cfg.node_id.clone(),
            message_type: message_type.to_string(),
            data,
            timestamp: self.stamp(now),
            ttl: self.cfg.initial_ttl,
        };
        self.cache.insert(MessageKey::of(&msg), now);
        msg
    }

    /// Forwards a copy with one less hop to a random sample of live peers.
    pub fn propagate(&mut self, msg: &GossipMessage) -> Vec<Outgoing> {
        if msg.ttl <= 1 {
            return Vec::new();
        }
        let live = self.live_peers();
        let n = fanout_targets(live.len());
        let mut copy = msg.clone();
        copy.ttl -= 1;
        live.choose_multiple(&mut self.rng, n).map(|to| Outgoing { to: to.clone(), msg: copy.clone() }).collect()
    }

    fn touch(&mut self, addr: &str, node_id: Option<&str>, heard: Timestamp, now: Timestamp) {
        self.add_peer(addr, heard);
        let suspect_after = self.cfg.suspect_after();
        if let Some(p) = self.peers.get_mut(addr) {
            if node_id.is_some() {
                p.node_id = node_id.map(str::to_string);
            }
            if heard > p.last_heard {
                p.last_heard = heard;
            }
            if now.since(p.last_heard) <= suspect_after {
                p.state = PeerState::Alive;
            }
        }
    }

    pub fn on_receive(&mut self, msg: GossipMessage, from: &str, now: Timestamp) -> Receipt {
        if msg.sender_id == self.cfg.node_id || !self.cache.insert(MessageKey::of(&msg), now) {
            return Receipt::Duplicate;
        }
        let origin = msg.data.get("address").and_then(Value::as_str).map(str::to_string);
        let leaving = msg.message_type == kinds::NODE_LEAVE;
        if !(leaving && origin.as_deref() == Some(from)) {
            let id = (origin.as_deref() == Some(from)).then_some(msg.sender_id.as_str());
            self.touch(from, id, now, now);
        }
        if let (Some(addr), false) = (&origin, leaving) {
            // A forwarded copy vouches for its originator as of when it was sent.
            self.touch(addr, Some(&msg.sender_id), msg.timestamp.min(now), now);
        }
        let applied = match msg.message_type.as_str() {
            kinds::AGENT_REGISTER | kinds::AGENT_UPDATE => {
                self.apply_presence(&msg, now, false);
                true
            }
            kinds::HEARTBEAT => {
                self.apply_presence(&msg, now, true);
                true
            }
            kinds::NODE_LEAVE => {
                self.apply_leave(&msg);
                true
            }
            other => {
                debug!(message_type = other, sender = %msg.sender_id, "unrecognized gossip message");
                false
            }
        };
        let sends = self.propagate(&msg);
        if applied {
            Receipt::Applied(sends)
        } else {
            Receipt::Unrecognized(sends)
        }
    }

    fn apply_presence(&mut self, msg: &GossipMessage, now: Timestamp, full_listing: bool) {
        if self.departed.get(&msg.sender_id).is_some_and(|t| *t >= msg.timestamp) {
            return;
        }
        if now.since(msg.timestamp) > self.cfg.expire_after() {
            return;
        }
        let endpoint = msg.data.get("endpoint").and_then(Value::as_str).map(str::to_string);
        let ads: Vec<AgentAd> =
            msg.data.get("agents").cloned().and_then(|v| serde_json::from_value(v).ok()).unwrap_or_default();
        let listed: BTreeSet<&str> = ads.iter().map(|a| a.agent_id.as_str()).collect();
        if full_listing {
            self.directory.retain(|id, r| {
                r.node_id != msg.sender_id || r.last_seen >= msg.timestamp || listed.contains(id.as_str())
            });
        }
        for ad in &ads {
            if parse_agent_id(&ad.agent_id).is_err() || self.local.contains(&ad.agent_id) {
                continue;
            }
            let newer = self.directory.get(&ad.agent_id).is_none_or(|r| r.last_seen < msg.timestamp);
            if newer {
                self.directory.insert(
                    ad.agent_id.clone(),
                    PresenceRecord {
                        agent_id: ad.agent_id.clone(),
                        capabilities: ad.capabilities.clone(),
                        node_id: msg.sender_id.clone(),
                        last_seen: msg.timestamp,
                        endpoint: endpoint.clone(),
                    },
                );
            }
        }
    }

    fn apply_leave(&mut self, msg: &GossipMessage) {
        let t = self.departed.entry(msg.sender_id.clone()).or_insert(msg.timestamp);
        if *t < msg.timestamp {
            *t = msg.timestamp;
        }
        self.directory.retain(|_, r| r.node_id != msg.sender_id || r.last_seen > msg.timestamp);
    }

    /// Publishes a local agent. Re-registering an existing id sends an update.
    pub fn register_agent(
        &mut self,
        agent_id: &str,
        capabilities: Vec<String>,
        now: Timestamp,
    ) -> Result<Vec<Outgoing>, GossipError> {
        parse_agent_id(agent_id).map_err(GossipError::InvalidAgentId)?;
        let kind = if self.local.insert(agent_id.to_string()) { kinds::AGENT_REGISTER } else { kinds::AGENT_UPDATE };
        let stamp = self.stamp(now);
        self.directory.insert(
            agent_id.to_string(),
            PresenceRecord {
                agent_id: agent_id.to_string(),
                capabilities,
                node_id: self.cfg.node_id.clone(),
                last_seen: stamp,
                endpoint: self.endpoint.clone(),
            },
        );
        let id = agent_id.to_string();
        let data = self.presence_data(&[&id]);
        let msg = self.originate(kind, data, now);
        Ok(self.propagate(&msg))
    }

    /// Withdraws a local agent; peers drop it on the next heartbeat.
    pub fn unregister_agent(&mut self, agent_id: &str) -> bool {
        if self.local.remove(agent_id) {
            self.directory.remove(agent_id);
            true
        } else {
            false
        }
    }

    pub fn local_agents(&self) -> Vec<&PresenceRecord> {
        self.local.iter().filter_map(|id| self.directory.get(id)).collect()
    }

    /// Marks a peer suspect after a failed send.
    pub fn on_send_failure(&mut self, to: &str) -> Option<Transition> {
        let p = self.peers.get_mut(to)?;
        if p.state != PeerState::Alive {
            return None;
        }
        p.state = PeerState::Suspect;
        Some(Transition { peer: to.to_string(), from: PeerState::Alive, to: PeerState::Suspect })
    }

    pub fn tick(&mut self, now: Timestamp) -> TickReport {
        let mut report = TickReport::default();
        let (suspect, dead, expire) = (self.cfg.suspect_after(), self.cfg.dead_after(), self.cfg.expire_after());
        for (addr, p) in self.peers.iter_mut() {
            let silence = now.since(p.last_heard);
            if p.state == PeerState::Alive && silence > suspect {
                report.transitions.push(Transition {
                    peer: addr.clone(),
                    from: PeerState::Alive,
                    to: PeerState::Suspect,
                });
                p.state = PeerState::Suspect;
            }
            if p.state == PeerState::Suspect && silence > dead {
                report.transitions.push(Transition {
                    peer: addr.clone(),
                    from: PeerState::Suspect,
                    to: PeerState::Dead,
                });
                p.state = PeerState::Dead;
            }
        }
        let local = &self.local;
        self.directory.retain(|id, r| {
            let keep = local.contains(id) || now.since(r.last_seen) <= expire;
            if !keep {
                report.expired.push(id.clone());
            }
            keep
        });

        let ids: Vec<String> = self.local.iter().cloned().collect();
        let data = self.presence_data(&ids.iter().collect::<Vec<_>>());
        let hb = self.originate(kinds::HEARTBEAT, data, now);
        for id in &ids {
            if let Some(r) = self.directory.get_mut(id) {
                r.last_seen = hb.timestamp;
                r.endpoint = self.endpoint.clone();
            }
        }
        report.sends = self.propagate(&hb);
        // Probe one dead peer so a healed partition is noticed.
        let dead_peer =
            self.peers.values().filter(|p| p.state == PeerState::Dead).map(PeerRecord::addr).choose(&mut self.rng);
        if let (Some(to), true) = (dead_peer, hb.ttl > 1) {
            let mut copy = hb.clone();
            copy.ttl -= 1;
            report.sends.push(Outgoing { to, msg: copy });
        }
        report
    }

    /// Departure notice, sent directly to every live peer.
    pub fn depart(&mut self, now: Timestamp) -> Vec<Outgoing> {
        let mut data = Params::new();
        data.insert("address".into(), json!(self.me));
        let msg = self.originate(kinds::NODE_LEAVE, data, now);
        let mut copy = msg;
        copy.ttl = copy.ttl.saturating_sub(1).max(1);
        self.live_peers().into_iter().map(|to| Outgoing { to, msg: copy.clone() }).collect()
    }

    fn visible(&self, r: &PresenceRecord, now: Timestamp) -> bool {
        self.local.contains(&r.agent_id) || now.since(r.last_seen) <= self.cfg.expire_after()
    }

    /// Non-expired records, ordered by agent id.
    pub fn records(&self, now: Timestamp) -> Vec<PresenceRecord> {
        self.directory.values().filter(|r| self.visible(r, now)).cloned().collect()
    }

    pub fn find_agent(&self, agent_id: &str, now: Timestamp) -> Option<PresenceRecord> {
        self.directory.get(agent_id).filter(|r| self.visible(r, now)).cloned()
    }

    pub fn find_agents_by_capability(&self, capability: &str, now: Timestamp) -> Vec<PresenceRecord> {
        self.directory
            .values()
            .filter(|r| self.visible(r, now) && r.capabilities.iter().any(|c| c == capability))
            .cloned()
            .collect()
    }

    /// `(agent_id, node_id)` pairs of the visible directory, for comparing views.
    pub fn fingerprint(&self, now: Timestamp) -> Vec<(String, String)> {
        self.records(now).into_iter().map(|r| (r.agent_id, r.node_id)).collect()
    }
}
