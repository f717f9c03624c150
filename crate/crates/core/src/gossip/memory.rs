use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};

use async_trait::async_trait;
use parking_lot::RwLock;

use super::service::{GossipService, GossipTransport};
use super::GossipError;
use crate::dht::MAX_DATAGRAM;
use crate::wire::{self, GossipMessage};

/// In-process datagram fabric. Delivery is fire-and-forget on a spawned task,
/// and every message is encoded and decoded as it would be on a socket.
#[derive(Default)]
pub struct MemoryGossipNetwork {
    nodes: RwLock<HashMap<String, Weak<GossipService>>>,
    down: RwLock<HashSet<String>>,
    sent: AtomicU64,
}

impl MemoryGossipNetwork {
    pub fn new() -> Arc<Self> {
        Arc::new(MemoryGossipNetwork::default())
    }

    pub fn transport(self: &Arc<Self>, local: impl Into<String>) -> Arc<MemoryGossipTransport> {
        Arc::new(MemoryGossipTransport { net: Arc::clone(self), local: local.into() })
    }

    pub fn attach(&self, service: &Arc<GossipService>) {
        self.nodes.write().insert(service.address(), Arc::downgrade(service));
    }

    pub fn detach(&self, addr: &str) {
        self.nodes.write().remove(addr);
    }

    /// A down address neither sends nor receives.
    pub fn set_down(&self, addr: &str, down: bool) {
        if down {
            self.down.write().insert(addr.to_string());
        } else {
            self.down.write().remove(addr);
        }
    }

    pub fn sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }
}

pub struct MemoryGossipTransport {
    net: Arc<MemoryGossipNetwork>,
    local: String,
}

#[async_trait]
impl GossipTransport for MemoryGossipTransport {
    async fn send(&self, to: &str, msg: &GossipMessage) -> Result<(), GossipError> {
        let bytes = wire::encode_shape(msg).map_err(|e| GossipError::Send(to.into(), e.to_string()))?;
        if bytes.len() > MAX_DATAGRAM {
            return Err(GossipError::DatagramTooLarge(bytes.len()));
        }
        self.net.sent.fetch_add(1, Ordering::Relaxed);
        {
            let down = self.net.down.read();
            if down.contains(&self.local) || down.contains(to) {
                return Ok(());
            }
        }
        let Some(target) = self.net.nodes.read().get(to).and_then(Weak::upgrade) else {
            return Err(GossipError::Send(to.into(), "no such node".into()));
        };
        let msg: GossipMessage = wire::decode_shape(&bytes).map_err(|e| GossipError::Send(to.into(), e.to_string()))?;
        let from = self.local.clone();
        tokio::spawn(async move {
            target.receive(msg, &from).await;
        });
        Ok(())
    }
}
