use std::net::SocketAddr;
use std::sync::Arc;

use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tracing::{info, warn};

use super::agents::builtin;
use super::config::NodeConfig;
use super::runtime::{AgentNode, NodeParts, ShutdownReport};
use super::sampler::HostSampler;
use super::NodeError;
use crate::dht::{Contact, Dht, DhtConfig, NodeId, UdpDhtTransport};
use crate::gossip::{GossipService, GossipState, UdpGossipTransport};
use crate::rpc::{rpc_router, serve_on, HttpTransport, RpcHandler};
use crate::shutdown::{Shutdown, ShutdownListener};
use crate::time::system_clock;

/// A node bound to real sockets: HTTP `/rpc`, plus UDP DHT and gossip when
/// configured.
pub struct RunningNode {
    node: Arc<AgentNode>,
    http_addr: SocketAddr,
    dht_addr: Option<SocketAddr>,
    gossip_addr: Option<SocketAddr>,
    io_stop: Shutdown,
    tasks: Vec<JoinHandle<()>>,
    grace: std::time::Duration,
}

pub(crate) fn bind_error(addr: &str) -> impl FnOnce(std::io::Error) -> NodeError + '_ {
    move |source| NodeError::Bind { addr: addr.to_string(), source }
}

fn split_host(addr: &SocketAddr) -> (String, u16) {
    (addr.ip().to_string(), addr.port())
}

impl RunningNode {
    pub async fn start(cfg: &NodeConfig) -> Result<Self, NodeError> {
        cfg.validate()?;
        let agents = cfg
            .agents
            .iter()
            .map(|name| builtin(name).ok_or_else(|| NodeError::Startup(format!("unknown built-in agent {name:?}"))))
            .collect::<Result<Vec<_>, _>>()?;

        let io_stop = Shutdown::new();
        let clock = system_clock();
        let node_id = cfg.node_id();
        let listener = TcpListener::bind(&cfg.listen).await.map_err(bind_error(&cfg.listen))?;
        let http_addr = listener.local_addr()?;
        let endpoint = cfg.advertise.clone().unwrap_or_else(|| http_addr.to_string());
        let mut tasks = Vec::new();

        let (dht, dht_addr) = match &cfg.dht {
            None => (None, None),
            Some(section) => {
                let udp = UdpDhtTransport::bind(&section.listen, cfg.delegation_timeout())
                    .await
                    .map_err(bind_error(&section.listen))?;
                let local = udp.local_addr()?;
                let (ip, port) = split_host(&local);
                let me = Contact::new(NodeId::for_key(&node_id), ip, port);
                let dht = Dht::new(me, DhtConfig::default(), udp.clone(), Arc::clone(&clock));
                udp.attach(&dht);
                tasks.push(udp.spawn(io_stop.listener()));
                (Some(dht), Some(local))
            }
        };

        let (gossip, gossip_addr) = match cfg.gossip()? {
            None => (None, None),
            Some(mut gcfg) => {
                gcfg.node_id = node_id.clone();
                let udp = UdpGossipTransport::bind(&gcfg.address()).await.map_err(bind_error(&gcfg.address()))?;
                let local = udp.local_addr()?;
                gcfg.port = local.port();
                let state = GossipState::new(gcfg, rand::random(), clock.now())
                    .map_err(|e| NodeError::Startup(e.to_string()))?;
                let service = GossipService::new(state, udp.clone(), Arc::clone(&clock));
                udp.attach(&service);
                tasks.push(udp.spawn(io_stop.listener()));
                tasks.push(service.spawn_ticker(io_stop.listener()));
                (Some(service), Some(local))
            }
        };

        let parts = NodeParts {
            node_id,
            node_name: cfg.node_name.clone(),
            endpoint,
            location: cfg.location.clone(),
            transport: Arc::new(HttpTransport::new(cfg.delegation_timeout())),
            clock,
            sampler: Arc::new(HostSampler::default()),
            dht: dht.clone(),
            gossip,
            registries: cfg.registries.clone(),
            delegation_timeout: cfg.delegation_timeout(),
            max_hops: cfg.max_hops,
            default_namespace: cfg.default_namespace.clone(),
        };
        let node = AgentNode::new(parts);
        let handler: Arc<dyn RpcHandler> = node.clone();
        let (_, server) = serve_on(listener, rpc_router(handler), io_stop.listener())?;
        tasks.push(server);

        if let (Some(dht), Some(section)) = (&dht, &cfg.dht) {
            if !section.bootstrap.is_empty() {
                if let Err(e) = dht.bootstrap_addrs(&section.bootstrap).await {
                    warn!(error = %e, "dht bootstrap failed; continuing with an empty table");
                }
            }
        }
        for agent in agents {
            node.register_local_agent(agent).await?;
        }
        tasks.extend(node.spawn_reporter(cfg.report_period()));
        info!(node = %node.node_id(), %http_addr, ?dht_addr, ?gossip_addr, "node started");
        Ok(RunningNode { node, http_addr, dht_addr, gossip_addr, io_stop, tasks, grace: cfg.shutdown_grace() })
    }

    pub fn node(&self) -> &Arc<AgentNode> {
        &self.node
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.http_addr
    }

    pub fn dht_addr(&self) -> Option<SocketAddr> {
        self.dht_addr
    }

    pub fn gossip_addr(&self) -> Option<SocketAddr> {
        self.gossip_addr
    }

    /// Fires on an `aios/shutdown` request.
    pub fn shutdown_requested(&self) -> ShutdownListener {
        self.node.shutdown_requested()
    }

    /// Drains, leaves the overlay and closes every socket.
    pub async fn stop(self) -> ShutdownReport {
        let report = self.node.shutdown(self.grace).await;
        self.io_stop.trigger();
        for t in self.tasks {
            let _ = tokio::time::timeout(self.grace, t).await;
        }
        info!(node = %self.node.node_id(), ?report, "node stopped");
        report
    }
}
