use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use futures::future::join_all;
use parking_lot::{Mutex, RwLock};
use serde_json::{json, Value};
use tokio::sync::Notify;
use tokio::task::JoinHandle;
use tracing::{debug, info, warn};

use super::agents::{AgentDescriptor, AgentOutcome, TaskInput};
use super::sampler::{HostSampler, Sampler};
use super::NodeError;
use crate::dht::{AgentLookup, Dht};
use crate::gossip::GossipService;
use crate::rpc::{RpcHandler, RpcTransport, TransportError};
use crate::shutdown::{Shutdown, ShutdownListener};
use crate::time::{system_clock, Clock, Timestamp};
use crate::wire::{
    self, codes, methods, AgentHit, AgentMetadata, DelegationResult, HumanTaskResult, LookupAgentParams,
    NodeStatusReport, Params, RegisterNodeParams, RpcErrorObject, RpcRequest, RpcResponse, StopReason, TaskAssignment,
    TaskParams, TaskStatus, TextContent,
};

/// Everything a node is built from besides its agents.
pub struct NodeParts {
    pub node_id: String,
    pub node_name: String,
    /// `host:port` other nodes use to reach this node's `/rpc`.
    pub endpoint: String,
    pub location: Option<String>,
    pub transport: Arc<dyn RpcTransport>,
    pub clock: Arc<dyn Clock>,
    pub sampler: Arc<dyn Sampler>,
    pub dht: Option<Arc<Dht>>,
    pub gossip: Option<Arc<GossipService>>,
    pub registries: Vec<String>,
    pub delegation_timeout: Duration,
    pub max_hops: u32,
    pub default_namespace: String,
}

impl NodeParts {
    pub fn new(node_id: impl Into<String>, endpoint: impl Into<String>, transport: Arc<dyn RpcTransport>) -> Self {
        let node_id = node_id.into();
        NodeParts {
            node_name: node_id.clone(),
            node_id,
            endpoint: endpoint.into(),
            location: None,
            transport,
            clock: system_clock(),
            sampler: Arc::new(HostSampler::default()),
            dht: None,
            gossip: None,
            registries: Vec::new(),
            delegation_timeout: Duration::from_secs(10),
            max_hops: 2,
            default_namespace: "example".into(),
        }
    }
}

/// A place a task could be delegated to.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub agent_id: String,
    pub node_id: String,
    pub endpoint: String,
    pub last_seen: Option<Timestamp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegistrationReceipt {
    /// `None` when the node runs without that subsystem.
    pub dht: Option<bool>,
    pub gossip: Option<bool>,
    pub registries_ok: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShutdownReport {
    pub drained: bool,
    pub failed_tasks: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeCounters {
    pub local_executions: u64,
    pub delegations: u64,
}

#[derive(Default)]
struct TaskBook {
    tasks: BTreeMap<String, TaskAssignment>,
    history: Vec<(String, TaskStatus)>,
}

impl TaskBook {
    fn open(&mut self, task_id: String, agent: &str) {
        self.history.push((task_id.clone(), TaskStatus::Pending));
        self.tasks.insert(
            task_id.clone(),
            TaskAssignment { task_id, assigned_agent: agent.to_string(), status: TaskStatus::Pending },
        );
    }

    /// Applies a legal transition; illegal ones (a late finish after a
    /// forced failure, say) are ignored.
    fn advance(&mut self, task_id: &str, next: TaskStatus) -> bool {
        match self.tasks.get_mut(task_id) {
            Some(t) if t.status.can_transition_to(next) => {
                t.status = next;
                self.history.push((task_id.to_string(), next));
                true
            }
            _ => false,
        }
    }
}

struct InFlight<'a>(&'a AgentNode);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        if self.0.in_flight.fetch_sub(1, Ordering::SeqCst) == 1 {
            self.0.idle.notify_waiters();
        }
    }
}

pub struct AgentNode {
    parts: NodeParts,
    agents: RwLock<Vec<AgentDescriptor>>,
    tasks: Mutex<TaskBook>,
    next_task: AtomicU64,
    accepting: AtomicBool,
    in_flight: AtomicUsize,
    idle: Notify,
    stop: Shutdown,
    requested: Shutdown,
    local_executions: AtomicU64,
    delegations: AtomicU64,
}

fn rpc_error(code: i64, message: impl Into<String>) -> RpcErrorObject {
    RpcErrorObject { code, message: message.into() }
}

impl AgentNode {
    pub fn new(parts: NodeParts) -> Arc<Self> {
        if let Some(g) = &parts.gossip {
            g.with_state(|s| s.set_endpoint(Some(parts.endpoint.clone())));
        }
        Arc::new(AgentNode {
            parts,
            agents: RwLock::new(Vec::new()),
            tasks: Mutex::new(TaskBook::default()),
            next_task: AtomicU64::new(1),
            accepting: AtomicBool::new(true),
            in_flight: AtomicUsize::new(0),
            idle: Notify::new(),
            stop: Shutdown::new(),
            requested: Shutdown::new(),
            local_executions: AtomicU64::new(0),
            delegations: AtomicU64::new(0),
        })
    }

    pub fn node_id(&self) -> &str {
        &self.parts.node_id
    }

    pub fn endpoint(&self) -> &str {
        &self.parts.endpoint
    }

    pub fn dht(&self) -> Option<&Arc<Dht>> {
        self.parts.dht.as_ref()
    }

    pub fn gossip(&self) -> Option<&Arc<GossipService>> {
        self.parts.gossip.as_ref()
    }

    pub fn registries(&self) -> &[String] {
        &self.parts.registries
    }

    /// Fires once the node has shut down.
    pub fn stopped(&self) -> ShutdownListener {
        self.stop.listener()
    }

    /// Fires when a shutdown has been asked for over RPC or via
    /// [`AgentNode::request_shutdown`].
    pub fn shutdown_requested(&self) -> ShutdownListener {
        self.requested.listener()
    }

    pub fn request_shutdown(&self) {
        self.accepting.store(false, Ordering::SeqCst);
        self.requested.trigger();
    }

    pub fn is_accepting(&self) -> bool {
        self.accepting.load(Ordering::SeqCst)
    }

    pub fn counters(&self) -> NodeCounters {
        NodeCounters {
            local_executions: self.local_executions.load(Ordering::Relaxed),
            delegations: self.delegations.load(Ordering::Relaxed),
        }
    }

    pub fn agent_ids(&self) -> Vec<String> {
        self.agents.read().iter().map(|a| a.agent_id.clone()).collect()
    }

    pub fn tasks(&self) -> Vec<TaskAssignment> {
        self.tasks.lock().tasks.values().cloned().collect()
    }

    /// Every status each task passed through, in order.
    pub fn task_history(&self) -> Vec<(String, TaskStatus)> {
        self.tasks.lock().history.clone()
    }

    fn agent_metadata(&self, desc: &AgentDescriptor, now: Timestamp) -> AgentMetadata {
        let mut meta = desc.metadata(now);
        meta.endpoint = Some(self.parts.endpoint.clone());
        meta
    }

    /// Hosts `desc` and announces it to the DHT, gossip and every registry.
    pub async fn register_local_agent(&self, desc: AgentDescriptor) -> Result<RegistrationReceipt, NodeError> {
        {
            let mut agents = self.agents.write();
            if agents.iter().any(|a| a.agent_id == desc.agent_id) {
                return Err(NodeError::Conflict(desc.agent_id));
            }
            agents.push(desc.clone());
        }
        let now = self.parts.clock.now();
        let mut receipt = RegistrationReceipt::default();
        if let Some(dht) = &self.parts.dht {
            let r = dht.register_agent(&desc.agent_id, self.agent_metadata(&desc, now)).await;
            if let Err(e) = &r {
                warn!(agent = %desc.agent_id, error = %e, "dht registration failed");
            }
            receipt.dht = Some(r.is_ok());
        }
        if let Some(g) = &self.parts.gossip {
            receipt.gossip = Some(g.register_agent(&desc.agent_id, desc.description.clone()).await.is_ok());
        }
        receipt.registries_ok = self.push_report_all().await;
        Ok(receipt)
    }

    pub async fn unregister_local_agent(&self, agent_id: &str) -> bool {
        let removed = {
            let mut agents = self.agents.write();
            let before = agents.len();
            agents.retain(|a| a.agent_id != agent_id);
            agents.len() != before
        };
        if removed {
            if let Some(g) = &self.parts.gossip {
                g.unregister_agent(agent_id);
            }
            self.push_report_all().await;
        }
        removed
    }

    pub fn report_status(&self) -> NodeStatusReport {
        NodeStatusReport {
            node_id: self.parts.node_id.clone(),
            node_name: self.parts.node_name.clone(),
            timestamp: self.parts.clock.now(),
            system_info: self.parts.sampler.sample(),
            available_agents: self.agent_ids(),
        }
    }

    fn registration(&self) -> RegisterNodeParams {
        let now = self.parts.clock.now();
        RegisterNodeParams {
            report: self.report_status(),
            address: self.parts.endpoint.clone(),
            agents: self.agents.read().iter().map(|a| self.agent_metadata(a, now)).collect(),
            location: self.parts.location.clone(),
        }
    }

    fn request_id(&self, prefix: &str) -> String {
        format!("{}-{prefix}-{}", self.parts.node_id, self.next_task.fetch_add(1, Ordering::Relaxed))
    }

    /// Sends the current report to one registry.
    pub async fn push_report(&self, registry: &str) -> Result<(), String> {
        let req = RpcRequest::with(self.request_id("report"), methods::REGISTER_NODE, &self.registration());
        match self.parts.transport.call(registry, &req, 0).await {
            Ok(resp) => match resp.error {
                None => Ok(()),
                Some(e) => Err(format!("{} ({})", e.message, e.code)),
            },
            Err(e) => Err(e.to_string()),
        }
    }

    /// Pushes to every configured registry; returns how many accepted.
    pub async fn push_report_all(&self) -> usize {
        let results = join_all(self.parts.registries.iter().map(|r| self.push_report(r))).await;
        for (r, res) in self.parts.registries.iter().zip(&results) {
            if let Err(e) = res {
                debug!(registry = %r, error = %e, "status report not delivered");
            }
        }
        results.iter().filter(|r| r.is_ok()).count()
    }

    /// One task per registry pushing a report every `period`; failures back
    /// off exponentially up to eight periods.
    pub fn spawn_reporter(self: &Arc<Self>, period: Duration) -> Vec<JoinHandle<()>> {
        self.parts
            .registries
            .iter()
            .cloned()
            .map(|registry| {
                let node = Arc::clone(self);
                let mut stop = self.stop.listener();
                tokio::spawn(async move {
                    let mut failures = 0u32;
                    loop {
                        let wait = match node.push_report(&registry).await {
                            Ok(()) => {
                                failures = 0;
                                period
                            }
                            Err(e) => {
                                failures = (failures + 1).min(3);
                                debug!(%registry, error = %e, failures, "registry push failed; backing off");
                                period * 2u32.pow(failures)
                            }
                        };
                        tokio::select! {
                            _ = stop.wait() => break,
                            _ = tokio::time::sleep(wait) => {}
                        }
                    }
                })
            })
            .collect()
    }

    fn local_match(&self, params: &TaskParams) -> Option<AgentDescriptor> {
        let agents = self.agents.read();
        let recipient = &params.recipient().id;
        agents.iter().find(|a| a.answers_to(recipient)).cloned().or_else(|| match params {
            TaskParams::Delegation(d) => agents.iter().find(|a| a.description.iter().any(|t| t == &d.intent)).cloned(),
            TaskParams::Human(_) => None,
        })
    }

    async fn run_agent(&self, agent: &AgentDescriptor, input: TaskInput) -> AgentOutcome {
        let handler = Arc::clone(&agent.handler);
        match tokio::spawn(async move { handler.handle(&input).await }).await {
            Ok(outcome) => outcome,
            Err(e) => Err(format!("agent {} crashed: {e}", agent.agent_id)),
        }
    }

    fn open_task(&self, agent: &str) -> String {
        let task_id = self.request_id("task");
        let mut book = self.tasks.lock();
        book.open(task_id.clone(), agent);
        book.advance(&task_id, TaskStatus::Running);
        task_id
    }

    fn close_task(&self, task_id: &str, ok: bool) {
        self.tasks.lock().advance(task_id, if ok { TaskStatus::Completed } else { TaskStatus::Failed });
    }

    async fn execute_local(&self, agent: &AgentDescriptor, params: &TaskParams) -> Params {
        self.local_executions.fetch_add(1, Ordering::Relaxed);
        let task_id = self.open_task(&agent.agent_id);
        let (result, ok) = match params {
            TaskParams::Human(h) => {
                let outcome = self.run_agent(agent, TaskInput::prompt(h.prompt())).await;
                let ok = outcome.is_ok();
                let (text, stop) = match outcome {
                    Ok(out) => {
                        let text = match out.get("text") {
                            Some(Value::String(t)) => t.clone(),
                            _ => Value::Object(out).to_string(),
                        };
                        let budget = h.max_tokens as usize * 4;
                        if text.chars().count() > budget {
                            (text.chars().take(budget).collect(), StopReason::MaxTokens)
                        } else {
                            (text, StopReason::EndTurn)
                        }
                    }
                    Err(msg) => (msg, StopReason::Error),
                };
                let result = HumanTaskResult {
                    sender: h.recipient.clone(),
                    recipient: h.sender.clone(),
                    content: TextContent::text(text),
                    model: agent.model.clone(),
                    stop_reason: stop,
                };
                (wire::to_params(&result), ok)
            }
            TaskParams::Delegation(d) => {
                let input = TaskInput {
                    name: d.task.name.clone(),
                    intent: Some(d.intent.clone()),
                    arguments: d.task.arguments.clone(),
                    text: None,
                };
                let outcome = self.run_agent(agent, input).await;
                let ok = outcome.is_ok();
                let result = DelegationResult::new(d.recipient.clone(), d.sender.clone(), d.task.name.clone(), outcome);
                (wire::to_params(&result), ok)
            }
        };
        self.close_task(&task_id, ok);
        result
    }

    /// A failed-task result in the shape the requester expects.
    fn failure_result(&self, params: &TaskParams, message: String) -> Params {
        match params {
            TaskParams::Human(h) => wire::to_params(&HumanTaskResult {
                sender: h.recipient.clone(),
                recipient: h.sender.clone(),
                content: TextContent::text(message),
                model: "unavailable".into(),
                stop_reason: StopReason::Error,
            }),
            TaskParams::Delegation(d) => wire::to_params(&DelegationResult::new(
                d.recipient.clone(),
                d.sender.clone(),
                d.task.name.clone(),
                Err(message),
            )),
        }
    }

    fn qualified(&self, id: &str) -> String {
        if id.contains('/') {
            id.to_string()
        } else {
            format!("{}/{id}", self.parts.default_namespace)
        }
    }

    /// Remote hosts for a task: gossip directory first, then the DHT, then
    /// registries. Newest first, ties by node id.
    pub async fn resolve(&self, params: &TaskParams) -> Vec<Candidate> {
        let recipient = params.recipient().id.clone();
        let full = self.qualified(&recipient);
        let intent = match params {
            TaskParams::Delegation(d) => Some(d.intent.clone()),
            TaskParams::Human(_) => None,
        };
        let mut found = Vec::new();

        if let Some(g) = &self.parts.gossip {
            let mut records: Vec<_> = g.find_agent(&full).into_iter().collect();
            if let Some(intent) = &intent {
                records.extend(g.find_agents_by_capability(intent));
            }
            found.extend(records.into_iter().filter_map(|r| {
                Some(Candidate {
                    agent_id: r.agent_id,
                    node_id: r.node_id,
                    endpoint: r.endpoint?,
                    last_seen: Some(r.last_seen),
                })
            }));
        }
        if found.is_empty() {
            if let Some(dht) = &self.parts.dht {
                if let Ok(AgentLookup::Found(meta)) = dht.find_agent(&full).await {
                    if let Some(endpoint) = meta.endpoint.clone() {
                        found.push(Candidate {
                            agent_id: meta.agent_id.clone(),
                            node_id: meta.node_id.clone().unwrap_or_default(),
                            endpoint,
                            last_seen: Some(meta.last_update.unwrap_or(meta.last_seen)),
                        });
                    }
                }
            }
        }
        if found.is_empty() {
            let mut queries = vec![recipient];
            queries.extend(intent);
            for registry in &self.parts.registries {
                for q in &queries {
                    found.extend(self.registry_lookup(registry, q).await);
                }
                if !found.is_empty() {
                    break;
                }
            }
        }

        found.retain(|c| c.endpoint != self.parts.endpoint && c.node_id != self.parts.node_id);
        found.sort_by(|a, b| b.last_seen.cmp(&a.last_seen).then_with(|| a.node_id.cmp(&b.node_id)));
        let mut seen = std::collections::HashSet::new();
        found.retain(|c| seen.insert(c.endpoint.clone()));
        found
    }

    async fn registry_lookup(&self, registry: &str, query: &str) -> Vec<Candidate> {
        let req = RpcRequest::with(
            self.request_id("lookup"),
            methods::LOOKUP_AGENT,
            &LookupAgentParams { query: query.to_string() },
        );
        let Ok(resp) = self.parts.transport.call(registry, &req, 0).await else { return Vec::new() };
        let hits: Vec<AgentHit> = resp
            .result
            .and_then(|r| r.get("matches").cloned())
            .and_then(|m| serde_json::from_value(m).ok())
            .unwrap_or_default();
        hits.into_iter()
            .map(|h| Candidate { agent_id: h.agent_id, node_id: h.node_id, endpoint: h.address, last_seen: None })
            .collect()
    }

    /// The execution workflow: local agent if one fits, else delegate to the
    /// best remote candidate (one retry), then hand back the result.
    pub async fn handle_task(&self, id: &str, params: TaskParams, hops: u32) -> Result<Params, RpcErrorObject> {
        if let Some(agent) = self.local_match(&params) {
            return Ok(self.execute_local(&agent, &params).await);
        }
        let recipient = params.recipient().id.clone();
        let not_found = || rpc_error(codes::AGENT_NOT_FOUND, format!("no agent for {recipient:?}"));
        if hops >= self.parts.max_hops {
            return Err(not_found());
        }
        let candidates = self.resolve(&params).await;
        if candidates.is_empty() {
            return Err(not_found());
        }
        self.delegations.fetch_add(1, Ordering::Relaxed);
        let task_id = self.open_task(&candidates[0].agent_id);
        let req = RpcRequest::new(id, methods::DELEGATE_TASK, params.to_params());
        let mut last_failure: Option<String> = None;
        for cand in candidates.iter().take(2) {
            let call = self.parts.transport.call(&cand.endpoint, &req, hops + 1);
            let outcome = match tokio::time::timeout(self.parts.delegation_timeout, call).await {
                Ok(r) => r,
                Err(_) => Err(TransportError::Timeout(cand.endpoint.clone())),
            };
            match outcome {
                Ok(RpcResponse { result: Some(result), .. }) => {
                    self.close_task(&task_id, true);
                    return Ok(result);
                }
                Ok(RpcResponse { error: Some(e), .. }) if e.code == codes::AGENT_NOT_FOUND => {
                    debug!(endpoint = %cand.endpoint, "candidate no longer hosts the agent");
                }
                Ok(RpcResponse { error, .. }) => {
                    self.close_task(&task_id, false);
                    return Err(error.unwrap_or_else(|| rpc_error(codes::INTERNAL_ERROR, "empty response")));
                }
                Err(e) => {
                    info!(endpoint = %cand.endpoint, error = %e, "delegation attempt failed");
                    last_failure = Some(e.to_string());
                }
            }
        }
        self.close_task(&task_id, false);
        match last_failure {
            Some(msg) => Ok(self.failure_result(&params, msg)),
            None => Err(not_found()),
        }
    }

    /// Stops taking requests, waits up to `grace` for in-flight ones, fails
    /// whatever is still open, and announces departure.
    pub async fn shutdown(&self, grace: Duration) -> ShutdownReport {
        self.accepting.store(false, Ordering::SeqCst);
        let drained = tokio::time::timeout(grace, async {
            loop {
                let notified = self.idle.notified();
                if self.in_flight.load(Ordering::SeqCst) == 0 {
                    break;
                }
                notified.await;
            }
        })
        .await
        .is_ok();
        let failed_tasks = {
            let mut book = self.tasks.lock();
            let open: Vec<String> =
                book.tasks.values().filter(|t| !t.status.is_terminal()).map(|t| t.task_id.clone()).collect();
            for id in &open {
                book.advance(id, TaskStatus::Running);
                book.advance(id, TaskStatus::Failed);
            }
            open.len()
        };
        if let Some(g) = &self.parts.gossip {
            g.leave().await;
        }
        self.stop.trigger();
        ShutdownReport { drained, failed_tasks }
    }
}

#[async_trait]
impl RpcHandler for AgentNode {
    async fn handle_rpc(&self, req: RpcRequest, hops: u32) -> RpcResponse {
        let read_only = matches!(req.method.as_str(), methods::NODE_STATUS | methods::HEALTH);
        if !self.is_accepting() && !read_only {
            return wire::make_error_response(req.id, codes::SHUTTING_DOWN, "node is shutting down");
        }
        self.in_flight.fetch_add(1, Ordering::SeqCst);
        let _guard = InFlight(self);
        let outcome = match req.method.as_str() {
            methods::DELEGATE_TASK => match req.task_params() {
                Ok(params) => self.handle_task(&req.id, params, hops).await,
                Err(e) => Err(rpc_error(codes::INVALID_PARAMS, e.to_string())),
            },
            methods::NODE_STATUS => Ok(wire::to_params(&self.report_status())),
            methods::HEALTH => {
                let mut p = Params::new();
                p.insert("status".into(), json!(if self.is_accepting() { "ok" } else { "draining" }));
                p.insert("node_id".into(), json!(self.parts.node_id));
                Ok(p)
            }
            methods::SHUTDOWN => {
                self.request_shutdown();
                let mut p = Params::new();
                p.insert("accepted".into(), json!(true));
                Ok(p)
            }
            other => Err(rpc_error(codes::METHOD_NOT_FOUND, format!("Method not found: {other}"))),
        };
        match outcome {
            Ok(result) => RpcResponse::success(req.id, result),
            Err(e) => wire::make_error_response(req.id, e.code, e.message),
        }
    }
}
