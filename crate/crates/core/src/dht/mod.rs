//! Kademlia distributed hash table holding agent metadata.
//!
//! [`RoutingTable`] and [`Lookup`] are pure state; [`Dht`] drives them over a
//! [`DhtRpc`] transport (in-memory for simulation, UDP datagrams in
//! deployment).

mod id;
mod lookup;
mod memory;
mod node;
mod proto;
mod routing;
mod udp;

pub use id::{Distance, NodeId, ID_BITS, ID_BYTES};
pub use lookup::Lookup;
pub use memory::{MemoryDhtNetwork, MemoryDhtTransport};
pub use node::{AgentLookup, Dht, DhtConfig, DhtRpc, LookupResult, NodeLookup, StoreAck, StoreRecord};
pub use proto::{DhtQuery, DhtReply, MAX_DATAGRAM};
pub use routing::{Contact, InsertOutcome, RoutingTable, TryInsert};
pub use udp::UdpDhtTransport;

use crate::wire::Violation;

/// Bucket capacity.
pub const K: usize = 20;
/// Lookup parallelism.
pub const ALPHA: usize = 3;
/// Replicas per stored record.
pub const REPLICATION: usize = 3;

pub fn xor_distance(a: &NodeId, b: &NodeId) -> Distance {
    a.distance(b)
}

/// `floor(log2(owner XOR other))`; identical ids have no bucket.
pub fn bucket_index(owner: &NodeId, other: &NodeId) -> Result<usize, DhtError> {
    owner.bucket_index(other).ok_or(DhtError::SelfContact)
}

/// DHT key under which an agent's metadata lives.
pub fn agent_key(agent_id: &str) -> String {
    format!("agent:{agent_id}")
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DhtError {
    #[error("contact is the table owner; it has no bucket")]
    SelfContact,
    #[error("key must be nonempty")]
    EmptyKey,
    #[error("invalid agent id: {0}")]
    InvalidAgentId(Violation),
    #[error("{0} unreachable")]
    Unreachable(String),
    #[error("request to {0} timed out")]
    Timeout(String),
    #[error("lookup failed: every candidate unreachable ({} partial contacts)", partial.len())]
    LookupFailed { partial: Vec<Contact> },
    #[error("store of {key:?} reached no replica")]
    StoreFailed { key: String },
    #[error("datagram of {0} bytes exceeds limit")]
    DatagramTooLarge(usize),
    #[error("protocol error: {0}")]
    Protocol(String),
}
