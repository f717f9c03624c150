use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};

use async_trait::async_trait;
use parking_lot::RwLock;

use super::node::{Dht, DhtConfig, DhtRpc};
use super::proto::{DhtQuery, DhtReply};
use super::routing::Contact;
use super::{DhtError, NodeId};
use crate::time::Clock;
use crate::wire;

/// In-process DHT network. Calls are delivered synchronously to the target's
/// handler, so a single-threaded executor gives a deterministic run.
#[derive(Default)]
pub struct MemoryDhtNetwork {
    nodes: RwLock<HashMap<NodeId, Weak<Dht>>>,
    down: RwLock<HashSet<NodeId>>,
    calls: AtomicU64,
    wire_roundtrip: AtomicBool,
}

impl MemoryDhtNetwork {
    pub fn new() -> Arc<Self> {
        Arc::new(MemoryDhtNetwork::default())
    }

    /// Pushes every query and reply through JSON encode/decode.
    pub fn with_wire_roundtrip(self: Arc<Self>) -> Arc<Self> {
        self.wire_roundtrip.store(true, Ordering::Relaxed);
        self
    }

    pub fn transport(self: &Arc<Self>) -> Arc<dyn DhtRpc> {
        Arc::new(MemoryDhtTransport { net: Arc::clone(self) })
    }

    pub fn spawn(self: &Arc<Self>, me: Contact, clock: Arc<dyn Clock>) -> Arc<Dht> {
        self.spawn_with(me, DhtConfig::default(), clock)
    }

    pub fn spawn_with(self: &Arc<Self>, me: Contact, config: DhtConfig, clock: Arc<dyn Clock>) -> Arc<Dht> {
        let dht = Dht::new(me, config, self.transport(), clock);
        self.attach(&dht);
        dht
    }

    pub fn attach(&self, dht: &Arc<Dht>) {
        self.nodes.write().insert(dht.id(), Arc::downgrade(dht));
    }

    pub fn detach(&self, id: &NodeId) {
        self.nodes.write().remove(id);
    }

    pub fn set_down(&self, id: NodeId, down: bool) {
        if down {
            self.down.write().insert(id);
        } else {
            self.down.write().remove(&id);
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn target(&self, id: &NodeId) -> Option<Arc<Dht>> {
        if self.down.read().contains(id) {
            return None;
        }
        self.nodes.read().get(id).and_then(Weak::upgrade)
    }
}

pub struct MemoryDhtTransport {
    net: Arc<MemoryDhtNetwork>,
}

#[async_trait]
impl DhtRpc for MemoryDhtTransport {
    async fn call(&self, from: &Contact, to: &Contact, query: DhtQuery) -> Result<DhtReply, DhtError> {
        self.net.calls.fetch_add(1, Ordering::Relaxed);
        let target = self.net.target(&to.node_id).ok_or_else(|| DhtError::Unreachable(to.addr()))?;
        if !self.net.wire_roundtrip.load(Ordering::Relaxed) {
            return Ok(target.handle(from, query).await);
        }
        let bytes =
            wire::encode_request(&query.to_request("mem", from)).map_err(|e| DhtError::Protocol(e.to_string()))?;
        let req = wire::decode_request(&bytes).map_err(|e| DhtError::Protocol(e.to_string()))?;
        let (sender, query) = DhtQuery::from_request(&req)?;
        let reply = target.handle(&sender, query).await;
        let bytes = wire::encode_response(&reply.to_response(req.id)).map_err(|e| DhtError::Protocol(e.to_string()))?;
        let resp = wire::decode_response(&bytes).map_err(|e| DhtError::Protocol(e.to_string()))?;
        DhtReply::from_response(&resp)
    }
}
