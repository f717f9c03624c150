//! Spawning a whole network of registries and nodes from a [`ScenarioSpec`],
//! either in-process over the loopback transport or on real sockets.

use std::fmt::Write as _;
use std::net::{TcpListener, UdpSocket};
use std::sync::Arc;
use std::time::{Duration, Instant};

use tracing::info;

use super::scenario::{node_name, registry_name, ClockMode, FaultAction, FaultSpec, FaultTarget, ScenarioSpec};
use super::HarnessError;
use crate::dht::{Contact, DhtConfig, MemoryDhtNetwork, NodeId};
use crate::node::{
    builtin_agents, AgentDescriptor, AgentNode, DhtSection, FixedSampler, NodeConfig, NodeError, NodeParts, RunningNode,
};
use crate::registry::{HealthPolicy, Registry, RegistryConfig, RegistryParts, RunningRegistry};
use crate::rpc::{HttpTransport, InstrumentedTransport, LoopbackNetwork, RpcHandler, RpcTransport};
use crate::shutdown::Shutdown;
use crate::time::{system_clock, Clock, ManualClock, Timestamp};

/// 2024-01-01T00:00:00Z, the simulated clock's t=0.
pub const SIM_EPOCH_MS: i64 = 1_704_067_200_000;

const CALL_TIMEOUT: Duration = Duration::from_secs(5);
const GRACE: Duration = Duration::from_millis(500);

/// Which agents node `i` hosts.
pub type Placement<'a> = dyn Fn(usize) -> Vec<AgentDescriptor> + Send + Sync + 'a;

pub struct Network {
    spec: ScenarioSpec,
    registry_addrs: Vec<String>,
    node_addrs: Vec<String>,
    log: String,
    mode: Mode,
}

enum Mode {
    InProcess(InProcess),
    Sockets { registries: Vec<RunningRegistry>, nodes: Vec<RunningNode> },
}

struct InProcess {
    manual: Option<ManualClock>,
    started: Instant,
    loopback: Arc<LoopbackNetwork>,
    dht_net: Arc<MemoryDhtNetwork>,
    transport: Arc<InstrumentedTransport>,
    registries: Vec<Arc<Registry>>,
    nodes: Vec<Arc<AgentNode>>,
    alive: Vec<bool>,
    cut: Vec<bool>,
    now_ms: u64,
    faults: Vec<FaultSpec>,
    next_fault: usize,
    stop: Shutdown,
    tasks: Vec<tokio::task::JoinHandle<()>>,
}

fn spawn_err(e: NodeError) -> HarnessError {
    HarnessError::Spawn(e.to_string())
}

/// Every node hosts all built-in agents.
pub async fn spawn_network(spec: &ScenarioSpec) -> Result<Network, HarnessError> {
    spawn_network_with(spec, &|_| builtin_agents()).await
}

pub async fn spawn_network_with(spec: &ScenarioSpec, placement: &Placement<'_>) -> Result<Network, HarnessError> {
    spec.validate()?;
    if spec.sockets {
        spawn_sockets(spec).await
    } else {
        spawn_in_process(spec, placement).await
    }
}

async fn spawn_in_process(spec: &ScenarioSpec, placement: &Placement<'_>) -> Result<Network, HarnessError> {
    let (clock, manual): (Arc<dyn Clock>, _) = match spec.clock {
        ClockMode::Simulated => {
            let m = ManualClock::new(Timestamp::from_millis(SIM_EPOCH_MS));
            (Arc::new(m.clone()), Some(m))
        }
        ClockMode::Real => (system_clock(), None),
    };
    let period = Duration::from_millis(spec.report_period_ms);
    let loopback = LoopbackNetwork::new();
    let dht_net = MemoryDhtNetwork::new();
    let plain: Arc<dyn RpcTransport> = loopback.transport(CALL_TIMEOUT);
    let transport = InstrumentedTransport::new(Arc::clone(&plain));
    let registry_addrs: Vec<String> =
        (0..spec.registry_count).map(|i| format!("{}.sim:8000", registry_name(i))).collect();
    let node_addrs: Vec<String> = (0..spec.node_count).map(|i| format!("{}.sim:9000", node_name(i))).collect();
    let mut log = String::new();

    let mut registries = Vec::new();
    for (i, addr) in registry_addrs.iter().enumerate() {
        let parts = RegistryParts {
            registry_id: registry_name(i),
            address: addr.clone(),
            policy: HealthPolicy::for_period(period),
            denylist: Vec::new(),
            peers: registry_addrs.iter().filter(|a| *a != addr).cloned().collect(),
            transport: Arc::clone(&plain),
            clock: Arc::clone(&clock),
            snapshot_path: None,
        };
        let reg = Registry::new(parts).map_err(|e| HarnessError::Spawn(e.to_string()))?;
        let handler: Arc<dyn RpcHandler> = reg.clone();
        loopback.bind(addr.clone(), &handler);
        registries.push(reg);
        let _ = writeln!(log, "0 registry {} at {addr}", registry_name(i));
    }

    let mut nodes: Vec<Arc<AgentNode>> = Vec::new();
    for (i, addr) in node_addrs.iter().enumerate() {
        let id = node_name(i);
        let contact = Contact::new(NodeId::for_key(&id), format!("10.2.{}.{}", i / 250, i % 250 + 1), 4000);
        let dht = dht_net.spawn_with(contact, DhtConfig::default(), Arc::clone(&clock));
        let mut parts = NodeParts::new(id.clone(), addr.clone(), transport.clone());
        parts.clock = Arc::clone(&clock);
        parts.sampler = Arc::new(FixedSampler::new(10.0, 20.0));
        parts.dht = Some(Arc::clone(&dht));
        parts.registries = registry_addrs.clone();
        parts.delegation_timeout = CALL_TIMEOUT;
        let node = AgentNode::new(parts);
        let handler: Arc<dyn RpcHandler> = node.clone();
        loopback.bind(addr.clone(), &handler);
        let seeds: Vec<Contact> =
            spec.seeds_of(i).iter().map(|&s| nodes[s].dht().expect("sim nodes have a dht").contact().clone()).collect();
        if !seeds.is_empty() {
            dht.bootstrap(&seeds).await.map_err(|e| HarnessError::Dht(format!("{id}: {e}")))?;
        }
        for agent in placement(i) {
            node.register_local_agent(agent).await.map_err(spawn_err)?;
        }
        let _ = writeln!(log, "0 node {id} at {addr} agents {:?}", node.agent_ids());
        nodes.push(node);
    }

    let stop = Shutdown::new();
    let mut tasks = Vec::new();
    if manual.is_none() {
        for r in &registries {
            tasks.push(r.spawn_maintenance(period, period, stop.listener()));
        }
        for n in &nodes {
            tasks.extend(n.spawn_reporter(period));
        }
    }
    let n = nodes.len();
    info!(nodes = n, registries = registries.len(), "in-process network spawned");
    Ok(Network {
        spec: spec.clone(),
        registry_addrs,
        node_addrs,
        log,
        mode: Mode::InProcess(InProcess {
            manual,
            started: Instant::now(),
            loopback,
            dht_net,
            transport,
            registries,
            nodes,
            alive: vec![true; n],
            cut: vec![false; n],
            now_ms: 0,
            faults: spec.schedule(),
            next_fault: 0,
            stop,
            tasks,
        }),
    })
}

/// Finds `count` ports free for both TCP and UDP by binding ephemeral
/// sockets, all released on return.
fn free_ports(count: usize) -> Result<Vec<u16>, HarnessError> {
    let mut out = Vec::with_capacity(count);
    let mut held = Vec::new();
    while out.len() < count {
        let tcp = TcpListener::bind("127.0.0.1:0").map_err(|e| HarnessError::Spawn(format!("127.0.0.1:0: {e}")))?;
        let port = tcp.local_addr().map_err(|e| HarnessError::Spawn(e.to_string()))?.port();
        if let Ok(udp) = UdpSocket::bind(("127.0.0.1", port)) {
            out.push(port);
            held.push((tcp, udp));
        }
    }
    Ok(out)
}

async fn spawn_sockets(spec: &ScenarioSpec) -> Result<Network, HarnessError> {
    let total = spec.registry_count + spec.node_count;
    let ports: Vec<u16> = match spec.base_port {
        Some(base) => (0..total)
            .map(|i| base.checked_add(i as u16).ok_or_else(|| HarnessError::Spec("port range overflows".into())))
            .collect::<Result<_, _>>()?,
        None => free_ports(total)?,
    };
    let addr = |p: u16| format!("127.0.0.1:{p}");
    let registry_addrs: Vec<String> = ports[..spec.registry_count].iter().map(|&p| addr(p)).collect();
    let node_addrs: Vec<String> = ports[spec.registry_count..].iter().map(|&p| addr(p)).collect();
    let mut log = String::new();

    let mut registries: Vec<RunningRegistry> = Vec::new();
    let mut nodes: Vec<RunningNode> = Vec::new();
    let fail = |e: NodeError, registries: Vec<RunningRegistry>, nodes: Vec<RunningNode>| async move {
        for n in nodes {
            n.stop().await;
        }
        for r in registries {
            r.stop().await;
        }
        spawn_err(e)
    };
    for (i, a) in registry_addrs.iter().enumerate() {
        let cfg = RegistryConfig {
            registry_id: registry_name(i),
            listen: a.clone(),
            peers: registry_addrs.iter().filter(|p| *p != a).cloned().collect(),
            report_period_ms: spec.report_period_ms,
            sweep_period_ms: spec.report_period_ms,
            sync_period_ms: spec.report_period_ms,
            ..RegistryConfig::default()
        };
        match RunningRegistry::start(&cfg).await {
            Ok(r) => registries.push(r),
            Err(e) => return Err(fail(e, registries, nodes).await),
        }
        let _ = writeln!(log, "registry {} at {a}", registry_name(i));
    }
    for (i, a) in node_addrs.iter().enumerate() {
        let mut cfg = NodeConfig::new(node_name(i));
        cfg.listen = a.clone();
        cfg.standalone = registry_addrs.is_empty();
        cfg.registries = registry_addrs.clone();
        cfg.report_period_ms = spec.report_period_ms;
        cfg.shutdown_grace_ms = GRACE.as_millis() as u64;
        cfg.dht = Some(DhtSection {
            listen: a.clone(),
            bootstrap: spec.seeds_of(i).iter().map(|&s| node_addrs[s].clone()).collect(),
        });
        match RunningNode::start(&cfg).await {
            Ok(n) => nodes.push(n),
            Err(e) => return Err(fail(e, registries, nodes).await),
        }
        let _ = writeln!(log, "node {} at {a}", node_name(i));
    }
    info!(nodes = nodes.len(), registries = registries.len(), "socket network spawned");
    Ok(Network { spec: spec.clone(), registry_addrs, node_addrs, log, mode: Mode::Sockets { registries, nodes } })
}

impl Network {
    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn registry_addrs(&self) -> &[String] {
        &self.registry_addrs
    }

    pub fn node_addrs(&self) -> &[String] {
        &self.node_addrs
    }

    pub fn registries(&self) -> Vec<Arc<Registry>> {
        match &self.mode {
            Mode::InProcess(p) => p.registries.clone(),
            Mode::Sockets { registries, .. } => registries.iter().map(|r| Arc::clone(r.registry())).collect(),
        }
    }

    pub fn nodes(&self) -> Vec<Arc<AgentNode>> {
        match &self.mode {
            Mode::InProcess(p) => p.nodes.clone(),
            Mode::Sockets { nodes, .. } => nodes.iter().map(|n| Arc::clone(n.node())).collect(),
        }
    }

    /// The counting transport every in-process node sends through.
    pub fn node_transport(&self) -> Option<Arc<InstrumentedTransport>> {
        match &self.mode {
            Mode::InProcess(p) => Some(Arc::clone(&p.transport)),
            Mode::Sockets { .. } => None,
        }
    }

    /// The in-memory DHT fabric, for counting overlay traffic.
    pub fn dht_network(&self) -> Option<Arc<MemoryDhtNetwork>> {
        match &self.mode {
            Mode::InProcess(p) => Some(Arc::clone(&p.dht_net)),
            Mode::Sockets { .. } => None,
        }
    }

    /// A transport reaching every address in this network from outside.
    pub fn client_transport(&self) -> Arc<dyn RpcTransport> {
        match &self.mode {
            Mode::InProcess(p) => p.loopback.transport(CALL_TIMEOUT),
            Mode::Sockets { .. } => Arc::new(HttpTransport::new(CALL_TIMEOUT)),
        }
    }

    pub fn log(&self) -> &str {
        &self.log
    }

    /// Milliseconds since spawn, on the network's clock.
    pub fn now_ms(&self) -> u64 {
        match &self.mode {
            Mode::InProcess(p) if p.manual.is_some() => p.now_ms,
            Mode::InProcess(p) => p.started.elapsed().as_millis() as u64,
            Mode::Sockets { .. } => 0,
        }
    }

    pub fn is_alive(&self, i: usize) -> bool {
        match &self.mode {
            Mode::InProcess(p) => p.alive[i] && !p.cut[i],
            Mode::Sockets { .. } => i < self.node_addrs.len(),
        }
    }

    /// Moves time forward by `by`. Simulated: every report period each live
    /// node reports, then registries sweep and sync, with faults applied as
    /// they fall due. Real clock: sleeps, applying faults on time.
    pub async fn advance(&mut self, by: Duration) -> Result<(), HarnessError> {
        let period = self.spec.report_period_ms;
        let Mode::InProcess(p) = &mut self.mode else {
            return Err(HarnessError::Spec("socket networks run on their own clocks".into()));
        };
        if p.manual.is_none() {
            let until = p.started.elapsed().as_millis() as u64 + by.as_millis() as u64;
            while let Some(f) = p.faults.get(p.next_fault).cloned().filter(|f| f.at_ms <= until) {
                let now = p.started.elapsed().as_millis() as u64;
                tokio::time::sleep(Duration::from_millis(f.at_ms.saturating_sub(now))).await;
                p.next_fault += 1;
                p.apply(&f, &mut self.log)?;
            }
            let now = p.started.elapsed().as_millis() as u64;
            tokio::time::sleep(Duration::from_millis(until.saturating_sub(now))).await;
            return Ok(());
        }
        let target = p.now_ms + by.as_millis() as u64;
        while p.now_ms < target {
            let next_tick = (p.now_ms / period + 1) * period;
            let next_fault = p.faults.get(p.next_fault).map(|f| f.at_ms.max(p.now_ms)).unwrap_or(u64::MAX);
            let step = next_tick.min(next_fault).min(target);
            p.set_time(step);
            while let Some(f) = p.faults.get(p.next_fault).cloned().filter(|f| f.at_ms <= step) {
                p.next_fault += 1;
                p.apply(&f, &mut self.log)?;
            }
            if step == next_tick {
                p.round(&mut self.log).await;
            }
        }
        Ok(())
    }

    /// Stops every node and registry; all addresses are free afterwards.
    pub async fn teardown(self) {
        match self.mode {
            Mode::InProcess(p) => {
                for n in &p.nodes {
                    n.shutdown(GRACE).await;
                }
                p.stop.trigger();
                for t in p.tasks {
                    let _ = tokio::time::timeout(GRACE, t).await;
                }
                for a in self.node_addrs.iter().chain(&self.registry_addrs) {
                    p.loopback.unbind(a);
                }
            }
            Mode::Sockets { registries, nodes } => {
                for n in nodes {
                    n.stop().await;
                }
                for r in registries {
                    r.stop().await;
                }
            }
        }
    }
}

impl InProcess {
    fn set_time(&mut self, ms: u64) {
        self.now_ms = ms;
        if let Some(m) = &self.manual {
            m.set(Timestamp::from_millis(SIM_EPOCH_MS + ms as i64));
        }
    }

    fn set_reachable(&self, i: usize) {
        let up = self.alive[i] && !self.cut[i];
        let id = NodeId::for_key(self.nodes[i].node_id());
        self.loopback.set_down(self.nodes[i].endpoint(), !up);
        self.dht_net.set_down(id, !up);
    }

    fn apply(&mut self, f: &FaultSpec, log: &mut String) -> Result<(), HarnessError> {
        let _ = writeln!(log, "{} fault {:?} {}", self.now_ms, f.action, f.target);
        match (f.action, f.target()?) {
            (FaultAction::Kill, FaultTarget::Node(i)) => self.alive[i] = false,
            (FaultAction::Partition, FaultTarget::Range(r)) => r.for_each(|i| self.cut[i] = true),
            (FaultAction::Heal, FaultTarget::Node(i)) => {
                self.alive[i] = true;
                self.cut[i] = false;
            }
            (FaultAction::Heal, FaultTarget::Range(r)) => r.for_each(|i| self.cut[i] = false),
            (FaultAction::Heal, FaultTarget::All) => self.cut.iter_mut().for_each(|c| *c = false),
            _ => return Err(HarnessError::Spec(format!("unsupported fault {f:?}"))),
        }
        for i in 0..self.nodes.len() {
            self.set_reachable(i);
        }
        Ok(())
    }

    async fn round(&mut self, log: &mut String) {
        for (i, node) in self.nodes.iter().enumerate() {
            if self.alive[i] && !self.cut[i] {
                node.push_report_all().await;
            }
        }
        for reg in &self.registries {
            for c in reg.health_sweep() {
                let _ = writeln!(log, "{} {} health {} {:?}->{:?}", self.now_ms, reg.id(), c.node_id, c.from, c.to);
            }
        }
        for reg in &self.registries {
            let peers = reg.peers().to_vec();
            reg.sync_with_peers(&peers).await;
        }
        for reg in &self.registries {
            let _ = writeln!(log, "{} {} fingerprint {}", self.now_ms, reg.id(), reg.fingerprint());
        }
    }
}
