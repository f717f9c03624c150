//! Scenario specs, deterministic simulators and benchmark drivers.

pub mod bench;
pub mod dht_sim;
pub mod gossip_sim;
pub mod network;
pub mod scenario;

use sha2::{Digest, Sha256};

pub use bench::{
    bench_comm, bench_comm_loopback, bench_registration, json_lines, loopback_echo_node, percentile, render_comm_table,
    render_registration_table, BenchReport, RegistrationBench, TraceEntry,
};
pub use dht_sim::{round_bound, run_dht_trials, DhtSimNetwork, DhtSimReport};
pub use gossip_sim::{run_convergence, run_convergence_with, ConvergenceReport, GossipSim, GossipSimConfig, SimStats};
pub use network::{spawn_network, spawn_network_with, Network, Placement, SIM_EPOCH_MS};
pub use scenario::{node_name, registry_name, ClockMode, FaultAction, FaultSpec, FaultTarget, ScenarioSpec, Topology};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("scenario: {0}")]
    Spec(String),
    #[error("spawn failed: {0}")]
    Spawn(String),
    #[error("dht: {0}")]
    Dht(String),
    #[error("rpc: {0}")]
    Rpc(String),
}

/// Hex SHA-256.
pub fn digest(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}
