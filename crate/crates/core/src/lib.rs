//! Runtime for a decentralized network of agent-hosting nodes.
//!
//! * [`wire`]: JSON-RPC 2.0 envelope and message shapes.
//! * [`dht`]: Kademlia registry of agent metadata.
//! * [`gossip`]: epidemic presence dissemination and capability directory.
//! * [`node`]: the agent-hosting runtime and its task workflow.
//! * [`registry`]: registry nodes with health tracking and peer sync.
//! * [`harness`]: simulation, fault injection and benchmarks.

pub mod dht;
pub mod gossip;
pub mod harness;
pub mod node;
pub mod registry;
pub mod rpc;
pub mod shutdown;
pub mod time;
pub mod wire;

pub use time::Timestamp;
