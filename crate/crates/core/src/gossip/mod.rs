//! Epidemic presence dissemination.
//!
//! [`GossipState`] is the whole protocol as a deterministic state machine:
//! it consumes received messages, local registrations and clock ticks, and
//! returns the datagrams to send. [`GossipService`] runs it over a
//! [`GossipTransport`] (UDP or in-memory).

mod cache;
mod config;
mod memory;
mod service;
mod state;
mod udp;

pub use cache::{MessageCache, MessageKey};
pub use config::GossipConfig;
pub use memory::{MemoryGossipNetwork, MemoryGossipTransport};
pub use service::{GossipService, GossipTransport};
pub use state::{GossipState, Outgoing, PeerRecord, PeerState, PresenceRecord, Receipt, TickReport, Transition};
pub use udp::UdpGossipTransport;

use crate::wire::Violation;

/// Hop budget given to freshly originated messages.
pub const INITIAL_TTL: u32 = 8;
pub const DEFAULT_PORT: u16 = 8001;

pub mod kinds {
    pub const AGENT_REGISTER: &str = "agent_register";
    pub const AGENT_UPDATE: &str = "agent_update";
    pub const HEARTBEAT: &str = "heartbeat";
    pub const NODE_LEAVE: &str = "node_leave";
}

/// Peers each hop forwards to: `min(n, max(3, floor(sqrt(n))))`.
pub fn fanout_targets(live_peer_count: usize) -> usize {
    live_peer_count.min(3.max(live_peer_count.isqrt()))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GossipError {
    #[error("invalid agent id: {0}")]
    InvalidAgentId(Violation),
    #[error("datagram of {0} bytes exceeds limit")]
    DatagramTooLarge(usize),
    #[error("send to {0} failed: {1}")]
    Send(String, String),
    #[error("bad config: {0}")]
    Config(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fanout_examples() {
        assert_eq!(fanout_targets(0), 0);
        assert_eq!(fanout_targets(2), 2);
        assert_eq!(fanout_targets(9), 3);
        assert_eq!(fanout_targets(100), 10);
    }

    proptest! {
        #[test]
        fn fanout_matches_float_formula(n in 0usize..10_000) {
            let want = n.min(3.max((n as f64).sqrt() as usize));
            prop_assert_eq!(fanout_targets(n), want);
        }
    }
}
