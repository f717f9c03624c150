//! JSON-RPC 2.0 envelope and every message shape carried inside it.
//!
//! Field names follow the reference documents exactly (`maxTokens`, `isError`,
//! `stopReason`, snake_case node reports). Key order is the declaration order
//! of each struct, and free-form maps keep insertion order, so `encode` is a
//! deterministic function of the message.

mod corpus;
pub mod schema;

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::time::Timestamp;

pub use corpus::{golden_corpus, GoldenEntry, REPAIRED_TEXT_PREFIX};

pub const JSONRPC_VERSION: &str = "2.0";

/// Free-form JSON object; keeps insertion order.
pub type Params = Map<String, Value>;

/// Standard JSON-RPC 2.0 error codes.
pub mod codes {
    pub const PARSE_ERROR: i64 = -32700;
    pub const INVALID_REQUEST: i64 = -32600;
    pub const METHOD_NOT_FOUND: i64 = -32601;
    pub const INVALID_PARAMS: i64 = -32602;
    pub const INTERNAL_ERROR: i64 = -32603;
    /// Server-defined range (-32000..=-32099).
    pub const AGENT_NOT_FOUND: i64 = -32001;
    pub const CONFLICT: i64 = -32002;
    pub const SHUTTING_DOWN: i64 = -32003;
    pub const REJECTED: i64 = -32004;
}

pub mod methods {
    pub const DELEGATE_TASK: &str = "aios/delegateTask";
    pub const NODE_STATUS: &str = "aios/nodeStatus";
    pub const SHUTDOWN: &str = "aios/shutdown";
    pub const REGISTER_NODE: &str = "aios/registerNode";
    pub const LIST_NODES: &str = "aios/listNodes";
    pub const LOOKUP_AGENT: &str = "aios/lookupAgent";
    pub const HEALTH: &str = "aios/health";
    pub const RELAY_TASK: &str = "aios/relayTask";
    pub const SYNC_SNAPSHOT: &str = "aios/syncSnapshot";
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub reason: String,
}

impl Violation {
    pub fn new(path: &str, reason: impl Into<String>) -> Self {
        Violation { path: path.to_string(), reason: reason.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() { "<root>" } else { &self.path };
        write!(f, "{path}: {}", self.reason)
    }
}

fn list(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WireError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported jsonrpc version {0:?}")]
    Version(String),
    #[error("validation failed: {}", list(.0))]
    Invalid(Vec<Violation>),
    #[error("encoding refused: {}", list(.0))]
    Refused(Vec<Violation>),
}

impl WireError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            WireError::Invalid(v) | WireError::Refused(v) => v,
            _ => &[],
        }
    }
}

// ---------------------------------------------------------------------------
// Envelope

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcRequest {
    pub jsonrpc: String,
    pub id: String,
    pub method: String,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcErrorObject {
    pub code: i64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcResponse {
    pub jsonrpc: String,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Params>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RpcErrorObject>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Request(RpcRequest),
    Response(RpcResponse),
}

impl From<RpcRequest> for Message {
    fn from(r: RpcRequest) -> Self {
        Message::Request(r)
    }
}

impl From<RpcResponse> for Message {
    fn from(r: RpcResponse) -> Self {
        Message::Response(r)
    }
}

impl RpcRequest {
    pub fn new(id: impl Into<String>, method: impl Into<String>, params: Params) -> Self {
        RpcRequest { jsonrpc: JSONRPC_VERSION.to_string(), id: id.into(), method: method.into(), params }
    }

    /// Builds a request whose params are the serialized form of `shape`.
    pub fn with<T: Serialize>(id: impl Into<String>, method: impl Into<String>, shape: &T) -> Self {
        RpcRequest::new(id, method, to_params(shape))
    }

    /// Typed view of `aios/delegateTask` params.
    pub fn task_params(&self) -> Result<TaskParams, WireError> {
        TaskParams::from_params(&self.params)
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.jsonrpc != JSONRPC_VERSION {
            out.push(Violation::new("jsonrpc", "must equal \"2.0\""));
        }
        if self.id.is_empty() {
            out.push(Violation::new("id", "must be nonempty"));
        }
        if self.method.is_empty() {
            out.push(Violation::new("method", "must be nonempty"));
        }
        if self.method == methods::DELEGATE_TASK {
            if let Err(e) = TaskParams::from_params(&self.params) {
                out.extend(e.violations().iter().cloned());
            }
        } else if let Some(kind) = params_schema(&self.method) {
            schema::check(kind, &Value::Object(self.params.clone()), "params", &mut out);
        }
        out
    }
}

impl RpcResponse {
    pub fn success(id: impl Into<String>, result: Params) -> Self {
        RpcResponse { jsonrpc: JSONRPC_VERSION.to_string(), id: id.into(), result: Some(result), error: None }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    /// Decodes `result` into a typed shape, validating it first.
    pub fn result_as<T: Shape>(&self) -> Result<T, WireError> {
        match &self.result {
            Some(r) => parse_shape(&Value::Object(r.clone())),
            None => Err(WireError::Invalid(vec![Violation::new("result", "missing")])),
        }
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.jsonrpc != JSONRPC_VERSION {
            out.push(Violation::new("jsonrpc", "must equal \"2.0\""));
        }
        if self.id.is_empty() {
            out.push(Violation::new("id", "must be nonempty"));
        }
        match (&self.result, &self.error) {
            (Some(_), Some(_)) => out.push(Violation::new("result", "result and error are mutually exclusive")),
            (None, None) => out.push(Violation::new("result", "one of result or error required")),
            _ => {}
        }
        out
    }
}

/// Error response with `result` absent.
pub fn make_error_response(id: impl Into<String>, code: i64, message: impl Into<String>) -> RpcResponse {
    RpcResponse {
        jsonrpc: JSONRPC_VERSION.to_string(),
        id: id.into(),
        result: None,
        error: Some(RpcErrorObject { code, message: message.into() }),
    }
}

fn prefixed(prefix: &str, v: Violation) -> Violation {
    Violation { path: format!("{prefix}.{}", v.path), reason: v.reason }
}

fn params_schema(method: &str) -> Option<&'static schema::Kind> {
    match method {
        methods::REGISTER_NODE => Some(&schema::REGISTER_NODE_PARAMS),
        methods::LOOKUP_AGENT => Some(&schema::LOOKUP_AGENT_PARAMS),
        methods::RELAY_TASK => Some(&schema::RELAY_TASK_PARAMS),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Encode / decode

/// Serializes a message after checking its invariants.
pub fn encode(message: &Message) -> Result<Vec<u8>, WireError> {
    let violations = match message {
        Message::Request(r) => r.violations(),
        Message::Response(r) => r.violations(),
    };
    if !violations.is_empty() {
        return Err(WireError::Refused(violations));
    }
    let bytes = match message {
        Message::Request(r) => serde_json::to_vec(r),
        Message::Response(r) => serde_json::to_vec(r),
    };
    bytes.map_err(|e| WireError::Parse(e.to_string()))
}

pub fn encode_request(r: &RpcRequest) -> Result<Vec<u8>, WireError> {
    encode(&Message::Request(r.clone()))
}

pub fn encode_response(r: &RpcResponse) -> Result<Vec<u8>, WireError> {
    encode(&Message::Response(r.clone()))
}

/// Parses and validates a JSON-RPC message. Requests carry `method`;
/// responses carry `result` or `error`.
pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| WireError::Parse(e.to_string()))?;
    decode_value(value)
}

pub fn decode_value(value: Value) -> Result<Message, WireError> {
    let Some(obj) = value.as_object() else {
        return Err(WireError::Invalid(vec![Violation::new("", "expected object")]));
    };
    match obj.get("jsonrpc") {
        Some(Value::String(v)) if v == JSONRPC_VERSION => {}
        Some(other) => {
            let shown = other.as_str().map(str::to_string).unwrap_or_else(|| other.to_string());
            return Err(WireError::Version(shown));
        }
        None => return Err(WireError::Invalid(vec![Violation::new("jsonrpc", "missing")])),
    }
    if obj.contains_key("method") {
        let mut out = Vec::new();
        schema::check(&schema::RPC_REQUEST, &value, "", &mut out);
        if !out.is_empty() {
            return Err(WireError::Invalid(out));
        }
        let req: RpcRequest = from_value(value)?;
        let violations = req.violations();
        if !violations.is_empty() {
            return Err(WireError::Invalid(violations));
        }
        Ok(Message::Request(req))
    } else if obj.contains_key("result") || obj.contains_key("error") {
        let mut out = Vec::new();
        schema::check(&schema::RPC_RESPONSE, &value, "", &mut out);
        if !out.is_empty() {
            return Err(WireError::Invalid(out));
        }
        let resp: RpcResponse = from_value(value)?;
        let violations = resp.violations();
        if !violations.is_empty() {
            return Err(WireError::Invalid(violations));
        }
        Ok(Message::Response(resp))
    } else {
        Err(WireError::Invalid(vec![Violation::new("", "neither method nor result/error present")]))
    }
}

pub fn decode_request(bytes: &[u8]) -> Result<RpcRequest, WireError> {
    match decode(bytes)? {
        Message::Request(r) => Ok(r),
        Message::Response(_) => Err(WireError::Invalid(vec![Violation::new("method", "missing")])),
    }
}

pub fn decode_response(bytes: &[u8]) -> Result<RpcResponse, WireError> {
    match decode(bytes)? {
        Message::Response(r) => Ok(r),
        Message::Request(_) => Err(WireError::Invalid(vec![Violation::new("result", "missing")])),
    }
}

fn from_value<T: DeserializeOwned>(value: Value) -> Result<T, WireError> {
    serde_json::from_value(value).map_err(|e| WireError::Invalid(vec![Violation::new("", e.to_string())]))
}

/// Serializes a shape into a params/result map.
pub fn to_params<T: Serialize>(shape: &T) -> Params {
    match serde_json::to_value(shape).expect("wire shapes serialize") {
        Value::Object(m) => m,
        other => panic!("wire shape serialized to non-object {other}"),
    }
}

// ---------------------------------------------------------------------------
// Typed shapes

/// A typed document with a shape table and semantic invariants.
pub trait Shape: Serialize + DeserializeOwned {
    const SCHEMA: &'static schema::Kind;

    fn violations(&self) -> Vec<Violation> {
        Vec::new()
    }
}

/// Structural check, deserialization, then semantic check.
pub fn parse_shape<T: Shape>(value: &Value) -> Result<T, WireError> {
    let mut out = Vec::new();
    schema::check(T::SCHEMA, value, "", &mut out);
    if !out.is_empty() {
        return Err(WireError::Invalid(out));
    }
    let typed: T = from_value(value.clone())?;
    let violations = typed.violations();
    if violations.is_empty() {
        Ok(typed)
    } else {
        Err(WireError::Invalid(violations))
    }
}

pub fn decode_shape<T: Shape>(bytes: &[u8]) -> Result<T, WireError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| WireError::Parse(e.to_string()))?;
    parse_shape(&value)
}

pub fn encode_shape<T: Shape>(shape: &T) -> Result<Vec<u8>, WireError> {
    let violations = shape.violations();
    if !violations.is_empty() {
        return Err(WireError::Refused(violations));
    }
    serde_json::to_vec(shape).map_err(|e| WireError::Parse(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
}

impl Endpoint {
    pub fn new(id: impl Into<String>) -> Self {
        Endpoint { id: id.into(), role: None }
    }

    pub fn with_role(id: impl Into<String>, role: impl Into<String>) -> Self {
        Endpoint { id: id.into(), role: Some(role.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextContent {
    #[serde(rename = "type")]
    pub kind: String,
    pub text: String,
}

impl TextContent {
    pub fn text(text: impl Into<String>) -> Self {
        TextContent { kind: "text".to_string(), text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: TextContent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanTaskParams {
    pub sender: Endpoint,
    pub recipient: Endpoint,
    pub messages: Vec<ChatMessage>,
    #[serde(rename = "maxTokens")]
    pub max_tokens: u32,
}

impl HumanTaskParams {
    /// A single user message.
    pub fn ask(sender: &str, recipient: &str, text: impl Into<String>, max_tokens: u32) -> Self {
        HumanTaskParams {
            sender: Endpoint::with_role(sender, "user"),
            recipient: Endpoint::with_role(recipient, "agent"),
            messages: vec![ChatMessage { role: "user".into(), content: TextContent::text(text) }],
            max_tokens,
        }
    }

    /// Text of the last `user` message, falling back to the last message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .or_else(|| self.messages.last())
            .map(|m| m.content.text.as_str())
            .unwrap_or("")
    }
}

impl Shape for HumanTaskParams {
    const SCHEMA: &'static schema::Kind = &schema::HUMAN_TASK_PARAMS;

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.sender.id.is_empty() {
            out.push(Violation::new("sender.id", "must be nonempty"));
        }
        if self.recipient.id.is_empty() {
            out.push(Violation::new("recipient.id", "must be nonempty"));
        }
        if self.messages.is_empty() {
            out.push(Violation::new("messages", "must be nonempty"));
        }
        for (i, m) in self.messages.iter().enumerate() {
            if m.content.kind != "text" {
                out.push(Violation::new(&format!("messages[{i}].content.type"), "only \"text\" is supported"));
            }
        }
        if self.max_tokens == 0 {
            out.push(Violation::new("maxTokens", "must be positive"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    #[serde(default)]
    pub arguments: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegationParams {
    pub intent: String,
    pub sender: Endpoint,
    pub recipient: Endpoint,
    pub task: TaskSpec,
}

impl DelegationParams {
    pub fn new(intent: &str, sender: &str, recipient: &str, task: &str, arguments: Params) -> Self {
        DelegationParams {
            intent: intent.into(),
            sender: Endpoint::with_role(sender, "agent"),
            recipient: Endpoint::with_role(recipient, "agent"),
            task: TaskSpec { name: task.into(), arguments },
        }
    }
}

impl Shape for DelegationParams {
    const SCHEMA: &'static schema::Kind = &schema::DELEGATION_PARAMS;

    fn violations(&self) -> Vec<Violation> {
        validate_delegation(self).err().unwrap_or_default()
    }
}

/// Semantic check of delegation params; `Err` lists every (path, reason).
pub fn validate_delegation(params: &DelegationParams) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if params.intent.is_empty() {
        out.push(Violation::new("intent", "must be nonempty"));
    }
    if params.sender.id.is_empty() {
        out.push(Violation::new("sender.id", "must be nonempty"));
    }
    if params.recipient.id.is_empty() {
        out.push(Violation::new("recipient.id", "must be nonempty"));
    }
    if params.task.name.is_empty() {
        out.push(Violation::new("task.name", "must be nonempty"));
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Params of `aios/delegateTask`: human-originated or agent-originated.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskParams {
    Human(HumanTaskParams),
    Delegation(DelegationParams),
}

impl TaskParams {
    pub fn from_params(params: &Params) -> Result<Self, WireError> {
        let value = Value::Object(params.clone());
        let prefix = |e: WireError| match e {
            WireError::Invalid(v) => WireError::Invalid(v.into_iter().map(|v| prefixed("params", v)).collect()),
            other => other,
        };
        if params.contains_key("messages") {
            parse_shape(&value).map(TaskParams::Human).map_err(prefix)
        } else if params.contains_key("intent") || params.contains_key("task") {
            parse_shape(&value).map(TaskParams::Delegation).map_err(prefix)
        } else {
            Err(WireError::Invalid(vec![Violation::new(
                "params",
                "expected human task (messages) or delegation (intent, task)",
            )]))
        }
    }

    pub fn to_params(&self) -> Params {
        match self {
            TaskParams::Human(p) => to_params(p),
            TaskParams::Delegation(p) => to_params(p),
        }
    }

    pub fn sender(&self) -> &Endpoint {
        match self {
            TaskParams::Human(p) => &p.sender,
            TaskParams::Delegation(p) => &p.sender,
        }
    }

    pub fn recipient(&self) -> &Endpoint {
        match self {
            TaskParams::Human(p) => &p.recipient,
            TaskParams::Delegation(p) => &p.recipient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum StopReason {
    EndTurn,
    MaxTokens,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanTaskResult {
    pub sender: Endpoint,
    pub recipient: Endpoint,
    pub content: TextContent,
    pub model: String,
    #[serde(rename = "stopReason")]
    pub stop_reason: StopReason,
}

impl Shape for HumanTaskResult {
    const SCHEMA: &'static schema::Kind = &schema::HUMAN_TASK_RESULT;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelegationStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegationContent {
    pub task: String,
    pub status: DelegationStatus,
    pub output: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegationResult {
    pub sender: Endpoint,
    pub recipient: Endpoint,
    pub content: DelegationContent,
    #[serde(rename = "isError")]
    pub is_error: bool,
}

impl DelegationResult {
    pub fn new(
        sender: Endpoint,
        recipient: Endpoint,
        task: impl Into<String>,
        outcome: Result<Params, String>,
    ) -> Self {
        let (status, output) = match outcome {
            Ok(output) => (DelegationStatus::Completed, output),
            Err(message) => {
                let mut output = Params::new();
                output.insert("error".into(), Value::String(message));
                (DelegationStatus::Failed, output)
            }
        };
        DelegationResult {
            sender,
            recipient,
            content: DelegationContent { task: task.into(), status, output },
            is_error: status == DelegationStatus::Failed,
        }
    }
}

impl Shape for DelegationResult {
    const SCHEMA: &'static schema::Kind = &schema::DELEGATION_RESULT;

    fn violations(&self) -> Vec<Violation> {
        if self.is_error != (self.content.status == DelegationStatus::Failed) {
            vec![Violation::new("isError", "must be true exactly when content.status is \"failed\"")]
        } else {
            Vec::new()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemInfo {
    pub cpu_percent: f64,
    pub memory_percent: f64,
    pub platform: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStatusReport {
    pub node_id: String,
    pub node_name: String,
    pub timestamp: Timestamp,
    pub system_info: SystemInfo,
    pub available_agents: Vec<String>,
}

impl Shape for NodeStatusReport {
    const SCHEMA: &'static schema::Kind = &schema::NODE_STATUS_REPORT;

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.node_id.is_empty() {
            out.push(Violation::new("node_id", "must be nonempty"));
        }
        for (name, v) in [
            ("system_info.cpu_percent", self.system_info.cpu_percent),
            ("system_info.memory_percent", self.system_info.memory_percent),
        ] {
            if !(0.0..=100.0).contains(&v) {
                out.push(Violation::new(name, "must lie within 0..=100"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Running,
    Completed,
    Failed,
}

impl TaskStatus {
    /// Legal lifecycle: pending → running → {completed, failed}.
    pub fn can_transition_to(self, next: TaskStatus) -> bool {
        matches!(
            (self, next),
            (TaskStatus::Pending, TaskStatus::Running)
                | (TaskStatus::Running, TaskStatus::Completed)
                | (TaskStatus::Running, TaskStatus::Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, TaskStatus::Completed | TaskStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAssignment {
    pub task_id: String,
    pub assigned_agent: String,
    pub status: TaskStatus,
}

impl Shape for TaskAssignment {
    const SCHEMA: &'static schema::Kind = &schema::TASK_ASSIGNMENT;
}

/// Agent availability record. The node fields are stamped by the hosting
/// node when the record is stored in the DHT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetadata {
    pub agent_id: String,
    pub description: Vec<String>,
    pub last_seen: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_update: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_ip: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_port: Option<u16>,
    /// `host:port` serving JSON-RPC for the hosting node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl AgentMetadata {
    pub fn new(agent_id: impl Into<String>, description: Vec<String>, last_seen: Timestamp) -> Self {
        AgentMetadata {
            agent_id: agent_id.into(),
            description,
            last_seen,
            last_update: None,
            node_id: None,
            node_ip: None,
            node_port: None,
            endpoint: None,
        }
    }
}

impl Shape for AgentMetadata {
    const SCHEMA: &'static schema::Kind = &schema::AGENT_METADATA;

    fn violations(&self) -> Vec<Violation> {
        match parse_agent_id(&self.agent_id) {
            Ok(_) => Vec::new(),
            Err(v) => vec![v],
        }
    }
}

/// Splits `namespace/agent_name`; both halves nonempty, exactly one `/`.
pub fn parse_agent_id(agent_id: &str) -> Result<(&str, &str), Violation> {
    let mut parts = agent_id.split('/');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(ns), Some(name), None) if !ns.is_empty() && !name.is_empty() => Ok((ns, name)),
        _ => Err(Violation::new("agent_id", format!("{agent_id:?} is not of the form namespace/agent_name"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GossipMessage {
    pub sender_id: String,
    pub message_type: String,
    pub data: Params,
    pub timestamp: Timestamp,
    pub ttl: u32,
}

impl Shape for GossipMessage {
    const SCHEMA: &'static schema::Kind = &schema::GOSSIP_MESSAGE;
}

/// Params of `aios/registerNode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterNodeParams {
    pub report: NodeStatusReport,
    pub address: String,
    /// Capability metadata for the reported agents, when the node has it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentMetadata>,
    /// Free-text location label shown by operator tools.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
}

impl Shape for RegisterNodeParams {
    const SCHEMA: &'static schema::Kind = &schema::REGISTER_NODE_PARAMS;

    fn violations(&self) -> Vec<Violation> {
        let mut out: Vec<Violation> = self.report.violations().into_iter().map(|v| prefixed("report", v)).collect();
        for (i, a) in self.agents.iter().enumerate() {
            out.extend(a.violations().into_iter().map(|v| prefixed(&format!("agents[{i}]"), v)));
        }
        out
    }
}

/// Params of `aios/lookupAgent`: an agent id or a capability tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupAgentParams {
    pub query: String,
}

impl Shape for LookupAgentParams {
    const SCHEMA: &'static schema::Kind = &schema::LOOKUP_AGENT_PARAMS;
}

/// One `aios/lookupAgent` match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentHit {
    pub agent_id: String,
    pub node_id: String,
    pub address: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Health {
    Online,
    Stale,
    Offline,
}

/// A registry's record of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEntry {
    pub report: NodeStatusReport,
    pub address: String,
    pub first_seen: Timestamp,
    pub last_report: Timestamp,
    pub health: Health,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentMetadata>,
    /// Set when the node reported a denylisted agent; the agent itself is
    /// stripped from the entry.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentIndexEntry {
    pub agent_id: String,
    pub node_ids: Vec<String>,
}

/// Result of `aios/listNodes`, and the registry's on-disk format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrySnapshot {
    pub version: u64,
    pub nodes: Vec<NodeEntry>,
    pub agents: Vec<AgentIndexEntry>,
}

impl Shape for RegistrySnapshot {
    const SCHEMA: &'static schema::Kind = &schema::REGISTRY_SNAPSHOT;
}

/// Params of `aios/relayTask`: a `delegateTask` payload for a registered node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayTaskParams {
    pub node_id: String,
    pub params: Params,
}

impl Shape for RelayTaskParams {
    const SCHEMA: &'static schema::Kind = &schema::RELAY_TASK_PARAMS;
}

/// Any standalone reference document.
#[derive(Debug, Clone, PartialEq)]
pub enum WireDocument {
    Request(RpcRequest),
    Response(RpcResponse),
    NodeReport(NodeStatusReport),
    TaskAssignment(TaskAssignment),
    AgentMetadata(AgentMetadata),
}

impl WireDocument {
    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        match self {
            WireDocument::Request(r) => encode_request(r),
            WireDocument::Response(r) => encode_response(r),
            WireDocument::NodeReport(r) => encode_shape(r),
            WireDocument::TaskAssignment(r) => encode_shape(r),
            WireDocument::AgentMetadata(r) => encode_shape(r),
        }
    }
}

/// Classifies a standalone document by its distinguishing fields.
pub fn decode_document(bytes: &[u8]) -> Result<WireDocument, WireError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| WireError::Parse(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| WireError::Invalid(vec![Violation::new("", "expected object")]))?;
    if obj.contains_key("jsonrpc") {
        Ok(match decode_value(value)? {
            Message::Request(r) => WireDocument::Request(r),
            Message::Response(r) => WireDocument::Response(r),
        })
    } else if obj.contains_key("system_info") {
        parse_shape(&value).map(WireDocument::NodeReport)
    } else if obj.contains_key("task_id") {
        parse_shape(&value).map(WireDocument::TaskAssignment)
    } else if obj.contains_key("agent_id") {
        parse_shape(&value).map(WireDocument::AgentMetadata)
    } else {
        Err(WireError::Invalid(vec![Violation::new("", "unrecognized document shape")]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn obj(v: Value) -> Params {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn both_result_and_error_is_refused() {
        let mut r = RpcResponse::success("1", Params::new());
        r.error = Some(RpcErrorObject { code: -1, message: "x".into() });
        let err = encode_response(&r).unwrap_err();
        assert!(matches!(err, WireError::Refused(_)));
        assert_eq!(err.violations()[0].path, "result");
    }

    #[test]
    fn empty_id_is_refused_naming_the_field() {
        let r = RpcRequest::new("", "aios/nodeStatus", Params::new());
        let err = encode_request(&r).unwrap_err();
        assert_eq!(err.violations()[0].path, "id");
    }

    #[test]
    fn wrong_version_is_a_version_error() {
        let err = decode(br#"{"jsonrpc":"1.0","id":"1","method":"x","params":{}}"#).unwrap_err();
        assert_eq!(err, WireError::Version("1.0".into()));
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(decode(b"{\"jsonrpc\":"), Err(WireError::Parse(_))));
    }

    #[test]
    fn schema_mismatch_lists_paths() {
        let raw = json!({
            "jsonrpc": "2.0", "id": "1", "method": "aios/delegateTask",
            "params": {"sender": {"id": ""}, "recipient": {"id": "a"}, "messages": [], "maxTokens": 0}
        });
        let err = decode(raw.to_string().as_bytes()).unwrap_err();
        let paths: Vec<_> = err.violations().iter().map(|v| v.path.clone()).collect();
        assert_eq!(paths, ["params.sender.id", "params.messages", "params.maxTokens"]);
    }

    #[test]
    fn error_response_has_no_result() {
        let r = make_error_response("task-001", codes::METHOD_NOT_FOUND, "Method not found");
        let text = String::from_utf8(encode_response(&r).unwrap()).unwrap();
        assert_eq!(text, r#"{"jsonrpc":"2.0","id":"task-001","error":{"code":-32601,"message":"Method not found"}}"#);
        let parse = make_error_response("x", codes::PARSE_ERROR, "Parse error");
        assert_eq!(parse.error.as_ref().unwrap().code, -32700);
        assert!(parse.result.is_none());
    }

    #[test]
    fn validate_delegation_flags_empty_intent_only() {
        let p: DelegationParams = serde_json::from_value(json!({
            "intent": "", "sender": {"id": "a"}, "recipient": {"id": "b"}, "task": {"name": "t"}
        }))
        .unwrap();
        let v = validate_delegation(&p).unwrap_err();
        assert_eq!(v, vec![Violation::new("intent", "must be nonempty")]);
    }

    #[test]
    fn absent_arguments_default_to_empty_map() {
        let raw = json!({
            "jsonrpc": "2.0", "id": "t", "method": "aios/delegateTask",
            "params": {"intent": "i", "sender": {"id": "a"}, "recipient": {"id": "b"}, "task": {"name": "n"}}
        });
        let req = decode_request(raw.to_string().as_bytes()).unwrap();
        let TaskParams::Delegation(p) = req.task_params().unwrap() else { panic!("expected delegation") };
        assert!(validate_delegation(&p).is_ok());
        assert!(p.task.arguments.is_empty());
        // Re-encoding the typed params now carries an explicit empty map.
        let again = RpcRequest::with("t", methods::DELEGATE_TASK, &p);
        let back = decode_request(&encode_request(&again).unwrap()).unwrap();
        assert_eq!(back.params["task"]["arguments"], json!({}));
        assert_eq!(back.task_params().unwrap(), TaskParams::Delegation(p));
    }

    #[test]
    fn is_error_must_mirror_status() {
        let mut r = DelegationResult::new(Endpoint::new("a"), Endpoint::new("b"), "t", Ok(Params::new()));
        assert!(!r.is_error);
        r.is_error = true;
        assert!(matches!(encode_shape(&r), Err(WireError::Refused(_))));
    }

    #[test]
    fn task_status_lifecycle() {
        use TaskStatus::*;
        assert!(Pending.can_transition_to(Running));
        assert!(Running.can_transition_to(Completed));
        assert!(Running.can_transition_to(Failed));
        assert!(!Pending.can_transition_to(Completed));
        assert!(!Completed.can_transition_to(Running));
    }

    #[test]
    fn agent_id_format() {
        assert_eq!(parse_agent_id("example/academic_agent").unwrap(), ("example", "academic_agent"));
        for bad in ["academic_agent", "/x", "x/", "a/b/c", ""] {
            assert!(parse_agent_id(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn response_without_result_or_error_is_rejected() {
        let err = decode_value(json!({"jsonrpc": "2.0", "id": "1"})).unwrap_err();
        assert!(matches!(err, WireError::Invalid(_)));
    }

    #[test]
    fn register_node_params_are_checked() {
        let r = RpcRequest::new("1", methods::REGISTER_NODE, obj(json!({"address": ""})));
        let err = encode_request(&r).unwrap_err();
        let paths: Vec<_> = err.violations().iter().map(|v| v.path.clone()).collect();
        assert_eq!(paths, ["params.report", "params.address"]);
    }
}
