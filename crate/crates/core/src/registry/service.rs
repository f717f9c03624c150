use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use axum::Router;
use futures::future::join_all;
use parking_lot::Mutex;
use serde_json::json;
use tokio::sync::Notify;
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;
use tracing::{debug, info, warn};

use super::state::{HealthChange, HealthPolicy, RegistryState};
use crate::rpc::{rpc_router, RpcHandler, RpcTransport};
use crate::shutdown::ShutdownListener;
use crate::time::Clock;
use crate::wire::{
    self, codes, methods, AgentHit, LookupAgentParams, Params, RegisterNodeParams, RegistrySnapshot, RelayTaskParams,
    RpcRequest, RpcResponse, WireError,
};

pub struct RegistryParts {
    pub registry_id: String,
    /// Address peers use to reach this registry; syncing with it is skipped.
    pub address: String,
    pub policy: HealthPolicy,
    pub denylist: Vec<String>,
    pub peers: Vec<String>,
    pub transport: Arc<dyn RpcTransport>,
    pub clock: Arc<dyn Clock>,
    pub snapshot_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncOutcome {
    pub reached: Vec<String>,
    pub unreachable: Vec<String>,
    pub changed: bool,
}

pub struct Registry {
    parts: RegistryParts,
    state: Mutex<RegistryState>,
    dirty: Notify,
}

fn invalid(e: WireError) -> (i64, String) {
    (codes::INVALID_PARAMS, e.to_string())
}

impl Registry {
    /// Loads the snapshot file when one exists.
    pub fn new(parts: RegistryParts) -> Result<Arc<Self>, WireError> {
        let now = parts.clock.now();
        let state = match parts.snapshot_path.as_deref().map(load_snapshot).transpose()?.flatten() {
            Some(snap) => {
                info!(nodes = snap.nodes.len(), version = snap.version, "registry state restored");
                RegistryState::restore(parts.policy.clone(), parts.denylist.clone(), snap, now)
            }
            None => RegistryState::new(parts.policy.clone(), parts.denylist.clone()),
        };
        Ok(Arc::new(Registry { parts, state: Mutex::new(state), dirty: Notify::new() }))
    }

    pub fn id(&self) -> &str {
        &self.parts.registry_id
    }

    pub fn address(&self) -> &str {
        &self.parts.address
    }

    pub fn peers(&self) -> &[String] {
        &self.parts.peers
    }

    pub fn with_state<R>(&self, f: impl FnOnce(&RegistryState) -> R) -> R {
        f(&self.state.lock())
    }

    fn mutate<R>(&self, f: impl FnOnce(&mut RegistryState) -> R) -> R {
        let mut st = self.state.lock();
        let before = st.version();
        let r = f(&mut st);
        if st.version() != before {
            self.dirty.notify_one();
        }
        r
    }

    pub fn register_node(&self, params: RegisterNodeParams) -> Result<u64, Vec<wire::Violation>> {
        let now = self.parts.clock.now();
        self.mutate(|st| st.register_node(params, now))
    }

    pub fn health_sweep(&self) -> Vec<HealthChange> {
        let now = self.parts.clock.now();
        let changes = self.mutate(|st| st.health_sweep(now));
        for c in &changes {
            info!(node = %c.node_id, from = ?c.from, to = ?c.to, "node health changed");
        }
        changes
    }

    /// Sweeps at the current time, then snapshots.
    pub fn list_nodes(&self) -> RegistrySnapshot {
        let now = self.parts.clock.now();
        self.mutate(|st| {
            st.health_sweep(now);
            st.snapshot()
        })
    }

    pub fn lookup_agent(&self, query: &str) -> Vec<AgentHit> {
        self.state.lock().lookup_agent(query)
    }

    pub fn merge(&self, snapshot: &RegistrySnapshot) -> bool {
        let now = self.parts.clock.now();
        self.mutate(|st| st.merge(snapshot, now))
    }

    pub fn fingerprint(&self) -> String {
        self.state.lock().fingerprint()
    }

    /// Exchanges snapshots with every peer: each side merges the other's.
    pub async fn sync_with_peers(&self, peers: &[String]) -> SyncOutcome {
        let targets: Vec<&String> = peers.iter().filter(|p| **p != self.parts.address).collect();
        let ours = self.state.lock().snapshot();
        let req = RpcRequest::with(
            format!("{}-sync-{}", self.parts.registry_id, ours.version),
            methods::SYNC_SNAPSHOT,
            &ours,
        );
        let replies = join_all(targets.iter().map(|p| self.parts.transport.call(p, &req, 0))).await;
        let mut out = SyncOutcome { reached: Vec::new(), unreachable: Vec::new(), changed: false };
        for (peer, reply) in targets.into_iter().zip(replies) {
            let theirs = reply
                .map_err(|e| e.to_string())
                .and_then(|r| r.result_as::<RegistrySnapshot>().map_err(|e| e.to_string()));
            match theirs {
                Ok(snap) => {
                    out.changed |= self.merge(&snap);
                    out.reached.push(peer.clone());
                }
                Err(e) => {
                    warn!(%peer, error = %e, "registry peer skipped during sync");
                    out.unreachable.push(peer.clone());
                }
            }
        }
        out
    }

    async fn relay(&self, id: &str, relay: RelayTaskParams, hops: u32) -> Result<Params, (i64, String)> {
        let address = self
            .state
            .lock()
            .entry(&relay.node_id)
            .map(|e| e.address.clone())
            .ok_or((codes::AGENT_NOT_FOUND, format!("unknown node {:?}", relay.node_id)))?;
        let req = RpcRequest::new(id, methods::DELEGATE_TASK, relay.params);
        match self.parts.transport.call(&address, &req, hops).await {
            Ok(RpcResponse { result: Some(r), .. }) => Ok(r),
            Ok(RpcResponse { error: Some(e), .. }) => Err((e.code, e.message)),
            Ok(_) => Err((codes::INTERNAL_ERROR, "empty response".into())),
            Err(e) => Err((codes::INTERNAL_ERROR, e.to_string())),
        }
    }

    /// Periodic health sweeps and peer syncs until `stop`.
    pub fn spawn_maintenance(
        self: &Arc<Self>,
        sweep_every: Duration,
        sync_every: Duration,
        mut stop: ShutdownListener,
    ) -> JoinHandle<()> {
        let this = Arc::clone(self);
        tokio::spawn(async move {
            let mut sweep = tokio::time::interval(sweep_every);
            let mut sync = tokio::time::interval(sync_every);
            loop {
                tokio::select! {
                    _ = stop.wait() => break,
                    _ = sweep.tick() => { this.health_sweep(); }
                    _ = sync.tick() => {
                        if !this.parts.peers.is_empty() {
                            this.sync_with_peers(&this.parts.peers).await;
                        }
                    }
                }
            }
        })
    }

    /// Writes the snapshot file at most once per `debounce` after a change,
    /// and once more on stop.
    pub fn spawn_persister(self: &Arc<Self>, debounce: Duration, mut stop: ShutdownListener) -> Option<JoinHandle<()>> {
        let path = self.parts.snapshot_path.clone()?;
        let this = Arc::clone(self);
        Some(tokio::spawn(async move {
            let mut written = None;
            loop {
                let stopping = tokio::select! {
                    _ = stop.wait() => true,
                    _ = this.dirty.notified() => false,
                };
                if !stopping {
                    tokio::time::sleep(debounce).await;
                }
                let snap = this.state.lock().snapshot();
                if written != Some(snap.version) {
                    match save_snapshot(&path, &snap) {
                        Ok(()) => written = Some(snap.version),
                        Err(e) => warn!(path = %path.display(), error = %e, "snapshot write failed"),
                    }
                }
                if stopping {
                    break;
                }
            }
        }))
    }

    /// `/rpc`, plus `/ui` from `ui_dir` when given.
    pub fn router(self: &Arc<Self>, ui_dir: Option<&Path>) -> Router {
        let handler: Arc<dyn RpcHandler> = self.clone();
        let router = rpc_router(handler);
        match ui_dir {
            Some(dir) => router.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true)),
            None => router,
        }
    }
}

pub fn load_snapshot(path: &Path) -> Result<Option<RegistrySnapshot>, WireError> {
    match std::fs::read(path) {
        Ok(bytes) => wire::decode_shape(&bytes).map(Some),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(WireError::Parse(format!("{}: {e}", path.display()))),
    }
}

/// Write-then-rename so a crash never leaves a torn file.
pub fn save_snapshot(path: &Path, snap: &RegistrySnapshot) -> std::io::Result<()> {
    let bytes = wire::encode_shape(snap).map_err(std::io::Error::other)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

#[async_trait]
impl RpcHandler for Registry {
    async fn handle_rpc(&self, req: RpcRequest, hops: u32) -> RpcResponse {
        let params = serde_json::Value::Object(req.params.clone());
        let outcome: Result<Params, (i64, String)> = match req.method.as_str() {
            methods::REGISTER_NODE => match wire::parse_shape::<RegisterNodeParams>(&params) {
                Ok(p) => self
                    .register_node(p)
                    .map(|version| wire::to_params(&json!({"accepted": true, "version": version})))
                    .map_err(|v| invalid(WireError::Invalid(v))),
                Err(e) => Err(invalid(e)),
            },
            methods::LIST_NODES => Ok(wire::to_params(&self.list_nodes())),
            methods::LOOKUP_AGENT => wire::parse_shape::<LookupAgentParams>(&params)
                .map(|p| wire::to_params(&json!({"matches": self.lookup_agent(&p.query)})))
                .map_err(invalid),
            methods::HEALTH => {
                let st = self.state.lock();
                Ok(wire::to_params(&json!({
                    "status": "ok",
                    "registry_id": self.parts.registry_id,
                    "version": st.version(),
                    "nodes": st.len(),
                })))
            }
            methods::SYNC_SNAPSHOT => match wire::parse_shape::<RegistrySnapshot>(&params) {
                Ok(snap) => {
                    let changed = self.merge(&snap);
                    debug!(changed, "snapshot merged from peer");
                    Ok(wire::to_params(&self.state.lock().snapshot()))
                }
                Err(e) => Err(invalid(e)),
            },
            methods::RELAY_TASK => match wire::parse_shape::<RelayTaskParams>(&params) {
                Ok(p) => self.relay(&req.id, p, hops).await,
                Err(e) => Err(invalid(e)),
            },
            other => Err((codes::METHOD_NOT_FOUND, format!("Method not found: {other}"))),
        };
        match outcome {
            Ok(result) => RpcResponse::success(req.id, result),
            Err((code, message)) => wire::make_error_response(req.id, code, message),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::{builtin, AgentNode, FixedSampler, NodeParts};
    use crate::rpc::LoopbackNetwork;
    use crate::time::{ManualClock, Timestamp};
    use crate::wire::{HumanTaskParams, HumanTaskResult};

    fn registry(net: &Arc<LoopbackNetwork>, name: &str, clock: &ManualClock, peers: &[&str]) -> Arc<Registry> {
        let r = Registry::new(RegistryParts {
            registry_id: name.into(),
            address: name.into(),
            policy: HealthPolicy::for_period(Duration::from_secs(1)),
            denylist: vec![],
            peers: peers.iter().map(|p| p.to_string()).collect(),
            transport: net.transport(Duration::from_secs(2)),
            clock: Arc::new(clock.clone()),
            snapshot_path: None,
        })
        .unwrap();
        let h: Arc<dyn RpcHandler> = r.clone();
        net.bind(name, &h);
        r
    }

    async fn node(net: &Arc<LoopbackNetwork>, id: &str, clock: &ManualClock, registry: &str) -> Arc<AgentNode> {
        let mut p = NodeParts::new(id, id, net.transport(Duration::from_secs(2)));
        p.clock = Arc::new(clock.clone());
        p.sampler = Arc::new(FixedSampler::new(23.4, 67.2));
        p.registries = vec![registry.into()];
        let n = AgentNode::new(p);
        let h: Arc<dyn RpcHandler> = n.clone();
        net.bind(id, &h);
        n.register_local_agent(builtin("math_agent").unwrap()).await.unwrap();
        n
    }

    #[tokio::test]
    async fn nodes_register_and_registries_sync() {
        let net = LoopbackNetwork::new();
        let clock = ManualClock::new(Timestamp::from_millis(1_700_000_000_000));
        let r1 = registry(&net, "r1", &clock, &["r2"]);
        let r2 = registry(&net, "r2", &clock, &["r1"]);
        node(&net, "n1", &clock, "r1").await;
        node(&net, "n2", &clock, "r2").await;
        assert_eq!(r1.list_nodes().nodes.len(), 1);

        let out = r1.sync_with_peers(r1.peers()).await;
        assert_eq!(out.reached, ["r2"]);
        assert!(out.changed);
        assert_eq!(r1.fingerprint(), r2.fingerprint());
        assert_eq!(r2.lookup_agent("example/math_agent").len(), 2);
        assert!(!r1.sync_with_peers(r1.peers()).await.changed);
    }

    #[tokio::test]
    async fn unreachable_peer_is_skipped() {
        let net = LoopbackNetwork::new();
        let clock = ManualClock::new(Timestamp::from_millis(0));
        let r1 = registry(&net, "r1", &clock, &["gone", "r1"]);
        let out = r1.sync_with_peers(r1.peers()).await;
        assert_eq!(out.unreachable, ["gone"]);
        assert!(out.reached.is_empty());
    }

    #[tokio::test]
    async fn relay_forwards_delegate_task() {
        let net = LoopbackNetwork::new();
        let clock = ManualClock::new(Timestamp::from_millis(1_700_000_000_000));
        let r = registry(&net, "r1", &clock, &[]);
        let _n1 = node(&net, "n1", &clock, "r1").await;
        let relay = RelayTaskParams {
            node_id: "n1".into(),
            params: wire::to_params(&HumanTaskParams::ask("ui", "math_agent", "2+3*4", 50)),
        };
        let resp = r.handle_rpc(RpcRequest::with("ui-7", methods::RELAY_TASK, &relay), 0).await;
        assert_eq!(resp.id, "ui-7");
        let out: HumanTaskResult = resp.result_as().unwrap();
        assert_eq!(out.content.text, "14");

        let bad = RelayTaskParams { node_id: "nobody".into(), params: Params::new() };
        let resp = r.handle_rpc(RpcRequest::with("ui-8", methods::RELAY_TASK, &bad), 0).await;
        assert_eq!(resp.error.unwrap().code, codes::AGENT_NOT_FOUND);
    }

    #[tokio::test]
    async fn node_goes_offline_when_silent() {
        let net = LoopbackNetwork::new();
        let clock = ManualClock::new(Timestamp::from_millis(1_700_000_000_000));
        let r = registry(&net, "r1", &clock, &[]);
        node(&net, "n1", &clock, "r1").await;
        clock.advance(Duration::from_millis(10_001));
        let snap = r.list_nodes();
        assert_eq!(snap.nodes[0].health, wire::Health::Offline);
        assert!(snap.agents.is_empty());
    }

    #[tokio::test]
    async fn snapshot_persists_across_restart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.json");
        let net = LoopbackNetwork::new();
        let clock = ManualClock::new(Timestamp::from_millis(1_700_000_000_000));
        let mk = || {
            Registry::new(RegistryParts {
                registry_id: "r".into(),
                address: "r".into(),
                policy: HealthPolicy::default(),
                denylist: vec![],
                peers: vec![],
                transport: net.transport(Duration::from_secs(1)),
                clock: Arc::new(clock.clone()),
                snapshot_path: Some(path.clone()),
            })
            .unwrap()
        };
        let r = mk();
        let h: Arc<dyn RpcHandler> = r.clone();
        net.bind("r", &h);
        let stop = crate::shutdown::Shutdown::new();
        let persister = r.spawn_persister(Duration::from_millis(10), stop.listener()).unwrap();
        node(&net, "n1", &clock, "r").await;
        let fp = r.fingerprint();
        stop.trigger();
        persister.await.unwrap();

        let again = mk();
        assert_eq!(again.fingerprint(), fp);
        assert_eq!(again.with_state(|s| s.version()), r.with_state(|s| s.version()));
    }

    #[tokio::test]
    async fn rejects_invalid_registration() {
        let net = LoopbackNetwork::new();
        let clock = ManualClock::new(Timestamp::from_millis(0));
        let r = registry(&net, "r1", &clock, &[]);
        let mut p = Params::new();
        p.insert("address".into(), json!("x:1"));
        let resp = r.handle_rpc(RpcRequest::new("1", methods::REGISTER_NODE, p), 0).await;
        assert_eq!(resp.error.unwrap().code, codes::INVALID_PARAMS);
    }
}
