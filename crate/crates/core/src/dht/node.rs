use std::collections::HashMap;
use std::sync::Arc;

use async_trait::async_trait;
use futures::future::join_all;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::debug;

use super::lookup::Lookup;
use super::proto::{DhtQuery, DhtReply};
use super::routing::{Contact, RoutingTable, TryInsert};
use super::{agent_key, DhtError, NodeId, ALPHA, K, REPLICATION};
use crate::time::{Clock, Timestamp};
use crate::wire::{self, AgentMetadata, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DhtConfig {
    pub k: usize,
    pub alpha: usize,
    pub replication: usize,
}

impl Default for DhtConfig {
    fn default() -> Self {
        DhtConfig { k: K, alpha: ALPHA, replication: REPLICATION }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub key: String,
    pub value: Params,
    pub stored_at: Timestamp,
    /// Node that initiated the store, when it is not the holder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replica_of: Option<NodeId>,
}

impl StoreRecord {
    fn last_update(&self) -> Option<Timestamp> {
        self.value.get("last_update").and_then(Value::as_str).and_then(|s| Timestamp::parse(s).ok())
    }
}

/// Outbound half of the DHT protocol.
#[async_trait]
pub trait DhtRpc: Send + Sync {
    async fn call(&self, from: &Contact, to: &Contact, query: DhtQuery) -> Result<DhtReply, DhtError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeLookup {
    /// Nearest answering nodes (possibly including the local node), at most k.
    pub closest: Vec<Contact>,
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LookupResult {
    Found { record: StoreRecord, rounds: usize },
    NotFound { closest: Vec<Contact>, rounds: usize },
}

impl LookupResult {
    pub fn rounds(&self) -> usize {
        match self {
            LookupResult::Found { rounds, .. } | LookupResult::NotFound { rounds, .. } => *rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreAck {
    pub key: String,
    pub replicas: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentLookup {
    Found(AgentMetadata),
    NotFound { closest: Vec<Contact> },
}

struct State {
    table: RoutingTable,
    records: HashMap<String, StoreRecord>,
    last_stamp: Option<Timestamp>,
}

/// One DHT participant. Routing table and record store sit behind a single
/// lock; no lock is held across a network await.
pub struct Dht {
    me: Contact,
    config: DhtConfig,
    state: Mutex<State>,
    transport: Arc<dyn DhtRpc>,
    clock: Arc<dyn Clock>,
}

impl Dht {
    pub fn new(me: Contact, config: DhtConfig, transport: Arc<dyn DhtRpc>, clock: Arc<dyn Clock>) -> Arc<Self> {
        Arc::new(Dht {
            state: Mutex::new(State {
                table: RoutingTable::new(me.node_id, config.k),
                records: HashMap::new(),
                last_stamp: None,
            }),
            me,
            config,
            transport,
            clock,
        })
    }

    pub fn id(&self) -> NodeId {
        self.me.node_id
    }

    pub fn contact(&self) -> &Contact {
        &self.me
    }

    pub fn config(&self) -> DhtConfig {
        self.config
    }

    pub fn routing_table(&self) -> RoutingTable {
        self.state.lock().table.clone()
    }

    pub fn local_record(&self, key: &str) -> Option<StoreRecord> {
        self.state.lock().records.get(key).cloned()
    }

    pub fn record_count(&self) -> usize {
        self.state.lock().records.len()
    }

    /// Serves an inbound query and learns the sender.
    pub async fn handle(&self, from: &Contact, query: DhtQuery) -> DhtReply {
        if from.node_id != self.me.node_id {
            self.observe(from.clone()).await;
        }
        match query {
            DhtQuery::Ping => DhtReply::Pong(self.me.clone()),
            DhtQuery::Store { key, value } => {
                let origin = (from.node_id != self.me.node_id).then_some(from.node_id);
                self.accept(key, value, origin);
                DhtReply::Stored
            }
            DhtQuery::FindNode { target } => DhtReply::Nodes(self.closest_excluding(&target, &from.node_id)),
            DhtQuery::FindValue { key } => match self.local_record(&key) {
                Some(record) => DhtReply::Value(record),
                None => DhtReply::Nodes(self.closest_excluding(&NodeId::for_key(&key), &from.node_id)),
            },
        }
    }

    fn closest_excluding(&self, target: &NodeId, requester: &NodeId) -> Vec<Contact> {
        let st = self.state.lock();
        let mut out = st.table.find_closest(target, self.config.k + 1);
        out.retain(|c| &c.node_id != requester);
        out.truncate(self.config.k);
        out
    }

    fn accept(&self, key: String, value: Params, replica_of: Option<NodeId>) {
        let record = StoreRecord { key: key.clone(), value, stored_at: self.clock.now(), replica_of };
        let mut st = self.state.lock();
        if let Some(existing) = st.records.get(&key) {
            if let (Some(old), Some(new)) = (existing.last_update(), record.last_update()) {
                if old > new {
                    return;
                }
            }
        }
        st.records.insert(key, record);
    }

    /// Adds a contact, probing the least-recently-seen member of a full bucket.
    pub async fn observe(&self, contact: Contact) {
        let attempt = self.state.lock().table.try_insert(contact.clone());
        if let Ok(TryInsert::Full { least_recent }) = attempt {
            let alive = self.ping(&least_recent).await;
            self.state.lock().table.resolve_probe(&least_recent, alive, contact);
        }
    }

    /// True if `to` answers and is who we think it is.
    pub async fn ping(&self, to: &Contact) -> bool {
        matches!(self.transport.call(&self.me, to, DhtQuery::Ping).await, Ok(DhtReply::Pong(c)) if c.node_id == to.node_id)
    }

    /// Pings a bare `host:port` and returns the contact that answered.
    pub async fn identify(&self, addr: &str) -> Result<Contact, DhtError> {
        let (ip, port) = addr
            .rsplit_once(':')
            .and_then(|(h, p)| Some((h.to_string(), p.parse::<u16>().ok()?)))
            .ok_or_else(|| DhtError::Unreachable(addr.to_string()))?;
        let probe = Contact::new(NodeId::from_bytes([0; super::ID_BYTES]), ip, port);
        match self.transport.call(&self.me, &probe, DhtQuery::Ping).await? {
            DhtReply::Pong(c) => Ok(c),
            other => Err(DhtError::Protocol(format!("unexpected reply to ping: {other:?}"))),
        }
    }

    /// Bootstrap from seeds known only by address; unreachable ones are skipped.
    pub async fn bootstrap_addrs(&self, addrs: &[String]) -> Result<NodeLookup, DhtError> {
        let mut seeds = Vec::new();
        for addr in addrs {
            match self.identify(addr).await {
                Ok(c) => seeds.push(c),
                Err(e) => debug!(%addr, error = %e, "dht seed unreachable"),
            }
        }
        self.bootstrap(&seeds).await
    }

    async fn query(&self, to: Contact, query: DhtQuery) -> (Contact, Result<DhtReply, DhtError>) {
        let reply = self.transport.call(&self.me, &to, query).await;
        (to, reply)
    }

    /// Seeds the routing table and looks up our own id to populate it.
    pub async fn bootstrap(&self, seeds: &[Contact]) -> Result<NodeLookup, DhtError> {
        for seed in seeds {
            if seed.node_id != self.me.node_id && self.ping(seed).await {
                self.observe(seed.clone()).await;
            }
        }
        self.find_node(self.me.node_id).await
    }

    /// Iterative FIND_NODE; the result may include the local node.
    pub async fn find_node(&self, target: NodeId) -> Result<NodeLookup, DhtError> {
        let seeds = self.state.lock().table.find_closest(&target, self.config.k);
        let mut lookup = Lookup::new(target, Some(self.me.clone()), seeds, self.config.k, self.config.alpha);
        while let Some(batch) = lookup.next_round() {
            let replies = join_all(batch.into_iter().map(|c| self.query(c, DhtQuery::FindNode { target }))).await;
            for (contact, reply) in replies {
                self.absorb(&mut lookup, contact, reply).await;
            }
            lookup.end_round();
        }
        self.check_reachable(&lookup)?;
        Ok(NodeLookup { closest: lookup.closest(), rounds: lookup.rounds() })
    }

    async fn absorb(&self, lookup: &mut Lookup, contact: Contact, reply: Result<DhtReply, DhtError>) {
        match reply {
            Ok(DhtReply::Nodes(nodes)) => {
                self.observe(contact.clone()).await;
                let nodes: Vec<Contact> = nodes.into_iter().filter(|c| c.node_id != self.me.node_id).collect();
                lookup.on_reply(&contact.node_id, nodes);
            }
            Ok(_) => {
                self.observe(contact.clone()).await;
                lookup.on_reply(&contact.node_id, Vec::new());
            }
            Err(e) => {
                debug!(peer = %contact.addr(), error = %e, "dht query failed");
                self.state.lock().table.remove(&contact.node_id);
                lookup.on_failure(&contact.node_id);
            }
        }
    }

    fn check_reachable(&self, lookup: &Lookup) -> Result<(), DhtError> {
        let me = Some(&self.me.node_id);
        if lookup.any_remote_queried(me) && !lookup.any_remote_answered(me) {
            return Err(DhtError::LookupFailed { partial: lookup.known() });
        }
        Ok(())
    }

    /// Iterative FIND_VALUE for `key`. A locally held record costs no rounds.
    pub async fn iterative_lookup(&self, key: &str) -> Result<LookupResult, DhtError> {
        if key.is_empty() {
            return Err(DhtError::EmptyKey);
        }
        if let Some(record) = self.local_record(key) {
            return Ok(LookupResult::Found { record, rounds: 0 });
        }
        let target = NodeId::for_key(key);
        let seeds = self.state.lock().table.find_closest(&target, self.config.k);
        let mut lookup = Lookup::new(target, Some(self.me.clone()), seeds, self.config.k, self.config.alpha);
        while let Some(batch) = lookup.next_round() {
            let replies =
                join_all(batch.into_iter().map(|c| self.query(c, DhtQuery::FindValue { key: key.to_string() }))).await;
            let mut found = None;
            for (contact, reply) in replies {
                if let Ok(DhtReply::Value(record)) = &reply {
                    found.get_or_insert_with(|| record.clone());
                }
                self.absorb(&mut lookup, contact, reply).await;
            }
            if let Some(record) = found {
                return Ok(LookupResult::Found { record, rounds: lookup.rounds() });
            }
            lookup.end_round();
        }
        self.check_reachable(&lookup)?;
        Ok(LookupResult::NotFound { closest: lookup.closest(), rounds: lookup.rounds() })
    }

    /// Writes `value` to the `replication` nodes nearest to `hash(key)`.
    pub async fn store(&self, key: &str, value: Params) -> Result<StoreAck, DhtError> {
        if key.is_empty() {
            return Err(DhtError::EmptyKey);
        }
        let closest = match self.find_node(NodeId::for_key(key)).await {
            Ok(found) => found.closest,
            // Nobody else answered: keep the record locally.
            Err(DhtError::LookupFailed { .. }) => vec![self.me.clone()],
            Err(e) => return Err(e),
        };
        let targets: Vec<Contact> = closest.into_iter().take(self.config.replication).collect();
        let mut replicas = Vec::new();
        let mut remote = Vec::new();
        for t in targets {
            if t.node_id == self.me.node_id {
                self.accept(key.to_string(), value.clone(), None);
                replicas.push(t.node_id);
            } else {
                remote.push(t);
            }
        }
        let replies = join_all(
            remote.into_iter().map(|c| self.query(c, DhtQuery::Store { key: key.to_string(), value: value.clone() })),
        )
        .await;
        for (contact, reply) in replies {
            match reply {
                Ok(DhtReply::Stored) => replicas.push(contact.node_id),
                Ok(other) => debug!(?other, "unexpected store reply"),
                Err(e) => debug!(peer = %contact.addr(), error = %e, "store failed"),
            }
        }
        if replicas.is_empty() {
            return Err(DhtError::StoreFailed { key: key.to_string() });
        }
        Ok(StoreAck { key: key.to_string(), replicas })
    }

    /// Stamps `last_update` (strictly increasing per node) and this node's
    /// address onto the metadata, then stores it under `agent:<agent_id>`.
    pub async fn register_agent(&self, agent_id: &str, metadata: AgentMetadata) -> Result<StoreAck, DhtError> {
        wire::parse_agent_id(agent_id).map_err(DhtError::InvalidAgentId)?;
        let mut metadata = metadata;
        metadata.agent_id = agent_id.to_string();
        metadata.last_update = Some(self.next_stamp());
        metadata.node_id = Some(self.me.node_id.to_hex());
        metadata.node_ip = Some(self.me.ip.clone());
        metadata.node_port = Some(self.me.port);
        self.store(&agent_key(agent_id), wire::to_params(&metadata)).await
    }

    fn next_stamp(&self) -> Timestamp {
        let now = self.clock.now();
        let mut st = self.state.lock();
        let stamp = match st.last_stamp {
            Some(prev) if prev >= now => prev.next_tick(),
            _ => now,
        };
        st.last_stamp = Some(stamp);
        stamp
    }

    pub async fn find_agent(&self, agent_id: &str) -> Result<AgentLookup, DhtError> {
        wire::parse_agent_id(agent_id).map_err(DhtError::InvalidAgentId)?;
        match self.iterative_lookup(&agent_key(agent_id)).await? {
            LookupResult::Found { record, .. } => wire::parse_shape::<AgentMetadata>(&Value::Object(record.value))
                .map(AgentLookup::Found)
                .map_err(|e| DhtError::Protocol(e.to_string())),
            LookupResult::NotFound { closest, .. } => Ok(AgentLookup::NotFound { closest }),
        }
    }
}
