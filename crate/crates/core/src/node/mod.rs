//! Agent nodes: hosted agents, the task workflow and the node lifecycle.

mod agents;
mod config;
mod launch;
pub(crate) use launch::bind_error;
mod runtime;
mod sampler;

pub use agents::{
    builtin, builtin_agents, eval_integer, AgentDescriptor, AgentHandler, AgentOutcome, EchoAgent, MathAgent,
    StatsAgent, TaskInput, FINANCIAL_REPORTS,
};
pub use config::{ConfigError, DhtSection, NodeConfig};
pub use launch::RunningNode;
pub use runtime::{AgentNode, Candidate, NodeCounters, NodeParts, RegistrationReceipt, ShutdownReport};
pub use sampler::{platform_name, FixedSampler, HostSampler, Sampler};

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error("agent {0} already registered")]
    Conflict(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("{0}")]
    Startup(String),
}
