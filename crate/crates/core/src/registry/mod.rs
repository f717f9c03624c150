//! Registry nodes: node registrations, health, the global agent index and
//! peer synchronization.

mod config;
mod launch;
mod service;
mod state;

pub use config::RegistryConfig;
pub use launch::RunningRegistry;
pub use service::{load_snapshot, save_snapshot, Registry, RegistryParts, SyncOutcome};
pub use state::{HealthChange, HealthPolicy, RegistryState};
