use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tracing::info;

use super::config::RegistryConfig;
use super::service::{Registry, RegistryParts};
use crate::node::bind_error;
use crate::node::NodeError;
use crate::rpc::{serve_on, HttpTransport};
use crate::shutdown::Shutdown;
use crate::time::system_clock;

/// A registry serving HTTP with its maintenance and persistence tasks.
pub struct RunningRegistry {
    registry: Arc<Registry>,
    addr: SocketAddr,
    stop: Shutdown,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningRegistry {
    pub async fn start(cfg: &RegistryConfig) -> Result<Self, NodeError> {
        cfg.validate()?;
        let listener = TcpListener::bind(&cfg.listen).await.map_err(bind_error(&cfg.listen))?;
        let addr = listener.local_addr()?;
        let parts = RegistryParts {
            registry_id: cfg.registry_id.clone(),
            address: cfg.advertise.clone().unwrap_or_else(|| addr.to_string()),
            policy: cfg.policy(),
            denylist: cfg.denylist.clone(),
            peers: cfg.peers.clone(),
            transport: Arc::new(HttpTransport::new(Duration::from_millis(cfg.relay_timeout_ms))),
            clock: system_clock(),
            snapshot_path: cfg.snapshot_path.clone(),
        };
        let registry = Registry::new(parts).map_err(|e| NodeError::Startup(e.to_string()))?;
        let stop = Shutdown::new();
        let (_, server) = serve_on(listener, registry.router(cfg.ui_dir.as_deref()), stop.listener())?;
        let mut tasks = vec![
            server,
            registry.spawn_maintenance(
                Duration::from_millis(cfg.sweep_period_ms),
                Duration::from_millis(cfg.sync_period_ms),
                stop.listener(),
            ),
        ];
        tasks.extend(registry.spawn_persister(Duration::from_millis(cfg.persist_debounce_ms), stop.listener()));
        info!(registry = %cfg.registry_id, %addr, peers = cfg.peers.len(), "registry started");
        Ok(RunningRegistry { registry, addr, stop, tasks })
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops serving and flushes the snapshot file.
    pub async fn stop(self) {
        self.stop.trigger();
        for t in self.tasks {
            let _ = t.await;
        }
    }
}
