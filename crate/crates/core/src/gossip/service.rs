use std::sync::Arc;

use async_trait::async_trait;
use futures::future::join_all;
use parking_lot::Mutex;
use tokio::task::JoinHandle;
use tracing::debug;

use super::state::{GossipState, Outgoing, PeerRecord, PresenceRecord, Receipt, TickReport};
use super::GossipError;
use crate::shutdown::ShutdownListener;
use crate::time::Clock;
use crate::wire::GossipMessage;

#[async_trait]
pub trait GossipTransport: Send + Sync {
    async fn send(&self, to: &str, msg: &GossipMessage) -> Result<(), GossipError>;
}

/// [`GossipState`] wired to a transport and a clock.
pub struct GossipService {
    state: Mutex<GossipState>,
    transport: Arc<dyn GossipTransport>,
    clock: Arc<dyn Clock>,
}

impl GossipService {
    pub fn new(state: GossipState, transport: Arc<dyn GossipTransport>, clock: Arc<dyn Clock>) -> Arc<Self> {
        Arc::new(GossipService { state: Mutex::new(state), transport, clock })
    }

    pub fn node_id(&self) -> String {
        self.state.lock().node_id().to_string()
    }

    pub fn address(&self) -> String {
        self.state.lock().address().to_string()
    }

    /// Runs `f` against the state under the lock.
    pub fn with_state<R>(&self, f: impl FnOnce(&mut GossipState) -> R) -> R {
        f(&mut self.state.lock())
    }

    async fn dispatch(&self, sends: Vec<Outgoing>) {
        let results = join_all(sends.iter().map(|o| self.transport.send(&o.to, &o.msg))).await;
        let mut state = self.state.lock();
        for (o, r) in sends.iter().zip(results) {
            if let Err(e) = r {
                debug!(to = %o.to, error = %e, "gossip send failed");
                state.on_send_failure(&o.to);
            }
        }
    }

    pub async fn receive(&self, msg: GossipMessage, from: &str) -> Receipt {
        let now = self.clock.now();
        let receipt = self.state.lock().on_receive(msg, from, now);
        self.dispatch(receipt.sends().to_vec()).await;
        receipt
    }

    pub async fn register_agent(&self, agent_id: &str, capabilities: Vec<String>) -> Result<(), GossipError> {
        let now = self.clock.now();
        let sends = self.state.lock().register_agent(agent_id, capabilities, now)?;
        self.dispatch(sends).await;
        Ok(())
    }

    pub fn unregister_agent(&self, agent_id: &str) -> bool {
        self.state.lock().unregister_agent(agent_id)
    }

    pub async fn tick(&self) -> TickReport {
        let now = self.clock.now();
        let report = self.state.lock().tick(now);
        self.dispatch(report.sends.clone()).await;
        report
    }

    pub async fn leave(&self) {
        let now = self.clock.now();
        let sends = self.state.lock().depart(now);
        self.dispatch(sends).await;
    }

    /// Ticks once per configured period until stopped.
    pub fn spawn_ticker(self: &Arc<Self>, mut stop: ShutdownListener) -> JoinHandle<()> {
        let this = Arc::clone(self);
        let period = self.state.lock().config().period;
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(period);
            interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                tokio::select! {
                    _ = stop.wait() => break,
                    _ = interval.tick() => {
                        this.tick().await;
                    }
                }
            }
        })
    }

    pub fn find_agent(&self, agent_id: &str) -> Option<PresenceRecord> {
        let now = self.clock.now();
        self.state.lock().find_agent(agent_id, now)
    }

    pub fn find_agents_by_capability(&self, capability: &str) -> Vec<PresenceRecord> {
        let now = self.clock.now();
        self.state.lock().find_agents_by_capability(capability, now)
    }

    pub fn records(&self) -> Vec<PresenceRecord> {
        let now = self.clock.now();
        self.state.lock().records(now)
    }

    pub fn peers(&self) -> Vec<PeerRecord> {
        self.state.lock().peers().cloned().collect()
    }
}
