//! Static shape descriptions for every on-wire document.
//!
//! One table per shape drives both structural validation of decoded JSON and
//! the JSON-Schema files exported for out-of-process consumers.

use std::io;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use super::Violation;
use crate::time::Timestamp;

#[derive(Debug)]
pub enum Kind {
    Str {
        non_empty: bool,
    },
    OneOf(&'static [&'static str]),
    Int {
        min: i64,
        max: i64,
    },
    Num {
        min: f64,
        max: f64,
    },
    Bool,
    Timestamp,
    /// Object with known fields; unknown fields are tolerated.
    Object(&'static [Field]),
    /// Free-form JSON object.
    Map,
    List {
        item: &'static Kind,
        non_empty: bool,
    },
    /// Another table, by reference.
    Ref(&'static Kind),
}

#[derive(Debug)]
pub struct Field {
    pub name: &'static str,
    pub kind: Kind,
    pub required: bool,
}

const fn req(name: &'static str, kind: Kind) -> Field {
    Field { name, kind, required: true }
}

const fn opt(name: &'static str, kind: Kind) -> Field {
    Field { name, kind, required: false }
}

const NON_EMPTY: Kind = Kind::Str { non_empty: true };
const ANY_STR: Kind = Kind::Str { non_empty: false };
static NON_EMPTY_ITEM: Kind = NON_EMPTY;
static ANY_STR_ITEM: Kind = ANY_STR;

pub static ENDPOINT: Kind = Kind::Object(&[req("id", NON_EMPTY), opt("role", ANY_STR)]);

pub static TEXT_CONTENT: Kind = Kind::Object(&[req("type", Kind::OneOf(&["text"])), req("text", ANY_STR)]);

static CHAT_MESSAGE: Kind = Kind::Object(&[
    req("role", NON_EMPTY),
    req("content", Kind::Object(&[req("type", Kind::OneOf(&["text"])), req("text", ANY_STR)])),
]);

pub static HUMAN_TASK_PARAMS: Kind = Kind::Object(&[
    req("sender", Kind::Object(&[req("id", NON_EMPTY), opt("role", ANY_STR)])),
    req("recipient", Kind::Object(&[req("id", NON_EMPTY), opt("role", ANY_STR)])),
    req("messages", Kind::List { item: &CHAT_MESSAGE, non_empty: true }),
    req("maxTokens", Kind::Int { min: 1, max: u32::MAX as i64 }),
]);

pub static DELEGATION_PARAMS: Kind = Kind::Object(&[
    req("intent", NON_EMPTY),
    req("sender", Kind::Object(&[req("id", NON_EMPTY), opt("role", ANY_STR)])),
    req("recipient", Kind::Object(&[req("id", NON_EMPTY), opt("role", ANY_STR)])),
    req("task", Kind::Object(&[req("name", NON_EMPTY), opt("arguments", Kind::Map)])),
]);

pub static HUMAN_TASK_RESULT: Kind = Kind::Object(&[
    req("sender", Kind::Object(&[req("id", NON_EMPTY), opt("role", ANY_STR)])),
    req("recipient", Kind::Object(&[req("id", NON_EMPTY), opt("role", ANY_STR)])),
    req("content", Kind::Object(&[req("type", Kind::OneOf(&["text"])), req("text", ANY_STR)])),
    req("model", ANY_STR),
    req("stopReason", Kind::OneOf(&["endTurn", "maxTokens", "error"])),
]);

pub static DELEGATION_RESULT: Kind = Kind::Object(&[
    req("sender", Kind::Object(&[req("id", NON_EMPTY), opt("role", ANY_STR)])),
    req("recipient", Kind::Object(&[req("id", NON_EMPTY), opt("role", ANY_STR)])),
    req(
        "content",
        Kind::Object(&[
            req("task", ANY_STR),
            req("status", Kind::OneOf(&["completed", "failed"])),
            req("output", Kind::Map),
        ]),
    ),
    req("isError", Kind::Bool),
]);

pub static NODE_STATUS_REPORT: Kind = Kind::Object(&[
    req("node_id", NON_EMPTY),
    req("node_name", ANY_STR),
    req("timestamp", Kind::Timestamp),
    req(
        "system_info",
        Kind::Object(&[
            req("cpu_percent", Kind::Num { min: 0.0, max: 100.0 }),
            req("memory_percent", Kind::Num { min: 0.0, max: 100.0 }),
            req("platform", ANY_STR),
        ]),
    ),
    req("available_agents", Kind::List { item: &NON_EMPTY_ITEM, non_empty: false }),
]);

pub static TASK_ASSIGNMENT: Kind = Kind::Object(&[
    req("task_id", NON_EMPTY),
    req("assigned_agent", NON_EMPTY),
    req("status", Kind::OneOf(&["pending", "running", "completed", "failed"])),
]);

pub static AGENT_METADATA: Kind = Kind::Object(&[
    req("agent_id", NON_EMPTY),
    req("description", Kind::List { item: &ANY_STR_ITEM, non_empty: false }),
    req("last_seen", Kind::Timestamp),
    opt("last_update", Kind::Timestamp),
    opt("node_id", ANY_STR),
    opt("node_ip", ANY_STR),
    opt("node_port", Kind::Int { min: 1, max: 65_535 }),
    opt("endpoint", ANY_STR),
]);

pub static GOSSIP_MESSAGE: Kind = Kind::Object(&[
    req("sender_id", NON_EMPTY),
    req("message_type", NON_EMPTY),
    req("data", Kind::Map),
    req("timestamp", Kind::Timestamp),
    req("ttl", Kind::Int { min: 0, max: u32::MAX as i64 }),
]);

pub static RPC_REQUEST: Kind = Kind::Object(&[
    req("jsonrpc", Kind::OneOf(&["2.0"])),
    req("id", NON_EMPTY),
    req("method", NON_EMPTY),
    opt("params", Kind::Map),
]);

pub static RPC_RESPONSE: Kind = Kind::Object(&[
    req("jsonrpc", Kind::OneOf(&["2.0"])),
    req("id", NON_EMPTY),
    opt("result", Kind::Map),
    opt("error", Kind::Object(&[req("code", Kind::Int { min: i64::MIN, max: i64::MAX }), req("message", ANY_STR)])),
]);

pub static REGISTER_NODE_PARAMS: Kind = Kind::Object(&[
    req("report", Kind::Ref(&NODE_STATUS_REPORT)),
    req("address", NON_EMPTY),
    opt("agents", Kind::List { item: &AGENT_METADATA, non_empty: false }),
    opt("location", ANY_STR),
]);

pub static LOOKUP_AGENT_PARAMS: Kind = Kind::Object(&[req("query", NON_EMPTY)]);

static AGENT_HIT: Kind =
    Kind::Object(&[req("agent_id", NON_EMPTY), req("node_id", NON_EMPTY), req("address", NON_EMPTY)]);

pub static LOOKUP_AGENT_RESULT: Kind =
    Kind::Object(&[req("matches", Kind::List { item: &AGENT_HIT, non_empty: false })]);

pub static NODE_ENTRY: Kind = Kind::Object(&[
    req("report", Kind::Ref(&NODE_STATUS_REPORT)),
    req("address", NON_EMPTY),
    req("first_seen", Kind::Timestamp),
    req("last_report", Kind::Timestamp),
    req("health", Kind::OneOf(&["online", "stale", "offline"])),
    opt("location", ANY_STR),
    opt("agents", Kind::List { item: &AGENT_METADATA, non_empty: false }),
    opt("flagged", Kind::Bool),
]);

pub static RELAY_TASK_PARAMS: Kind = Kind::Object(&[req("node_id", NON_EMPTY), req("params", Kind::Map)]);

static AGENT_INDEX_ENTRY: Kind =
    Kind::Object(&[req("agent_id", NON_EMPTY), req("node_ids", Kind::List { item: &NON_EMPTY_ITEM, non_empty: true })]);

pub static REGISTRY_SNAPSHOT: Kind = Kind::Object(&[
    req("version", Kind::Int { min: 0, max: i64::MAX }),
    req("nodes", Kind::List { item: &NODE_ENTRY, non_empty: false }),
    req("agents", Kind::List { item: &AGENT_INDEX_ENTRY, non_empty: false }),
]);

/// Walks `value` against `kind`, appending one violation per offending path.
pub fn check(kind: &Kind, value: &Value, path: &str, out: &mut Vec<Violation>) {
    match kind {
        Kind::Str { non_empty } => match value.as_str() {
            None => out.push(Violation::new(path, "expected string")),
            Some("") if *non_empty => out.push(Violation::new(path, "must be nonempty")),
            Some(_) => {}
        },
        Kind::OneOf(allowed) => match value.as_str() {
            Some(s) if allowed.contains(&s) => {}
            Some(s) => out.push(Violation::new(path, format!("{s:?} is not one of {}", allowed.join(", ")))),
            None => out.push(Violation::new(path, "expected string")),
        },
        Kind::Int { min, max } => match value.as_i64() {
            Some(n) if n >= *min && n <= *max => {}
            Some(n) => out.push(Violation::new(path, format!("{n} outside [{min}, {max}]"))),
            None => out.push(Violation::new(path, "expected integer")),
        },
        Kind::Num { min, max } => match value.as_f64() {
            Some(n) if n >= *min && n <= *max => {}
            Some(n) => out.push(Violation::new(path, format!("{n} outside [{min}, {max}]"))),
            None => out.push(Violation::new(path, "expected number")),
        },
        Kind::Bool => {
            if !value.is_boolean() {
                out.push(Violation::new(path, "expected boolean"));
            }
        }
        Kind::Timestamp => match value.as_str() {
            Some(s) if Timestamp::parse(s).is_ok() => {}
            _ => out.push(Violation::new(path, "expected RFC-3339 UTC timestamp")),
        },
        Kind::Map => {
            if !value.is_object() {
                out.push(Violation::new(path, "expected object"));
            }
        }
        Kind::Object(fields) => {
            let Some(obj) = value.as_object() else {
                out.push(Violation::new(path, "expected object"));
                return;
            };
            for field in fields.iter() {
                let child = join(path, field.name);
                match obj.get(field.name) {
                    Some(v) => check(&field.kind, v, &child, out),
                    None if field.required => out.push(Violation::new(&child, "missing")),
                    None => {}
                }
            }
        }
        Kind::Ref(inner) => check(inner, value, path, out),
        Kind::List { item, non_empty } => {
            let Some(items) = value.as_array() else {
                out.push(Violation::new(path, "expected array"));
                return;
            };
            if *non_empty && items.is_empty() {
                out.push(Violation::new(path, "must be nonempty"));
            }
            for (i, v) in items.iter().enumerate() {
                check(item, v, &format!("{path}[{i}]"), out);
            }
        }
    }
}

fn join(path: &str, name: &str) -> String {
    if path.is_empty() {
        name.to_string()
    } else {
        format!("{path}.{name}")
    }
}

/// JSON-Schema (draft 2020-12) rendering of a shape table.
pub fn json_schema(kind: &Kind) -> Value {
    match kind {
        Kind::Str { non_empty: true } => json!({"type": "string", "minLength": 1}),
        Kind::Str { non_empty: false } => json!({"type": "string"}),
        Kind::OneOf(allowed) => json!({"type": "string", "enum": allowed}),
        Kind::Int { min, max } => {
            let mut m = Map::new();
            m.insert("type".into(), json!("integer"));
            if *min != i64::MIN {
                m.insert("minimum".into(), json!(min));
            }
            if *max != i64::MAX {
                m.insert("maximum".into(), json!(max));
            }
            Value::Object(m)
        }
        Kind::Num { min, max } => json!({"type": "number", "minimum": min, "maximum": max}),
        Kind::Bool => json!({"type": "boolean"}),
        Kind::Timestamp => json!({
            "type": "string",
            "pattern": "^[0-9]{4}-[0-9]{2}-[0-9]{2}T[0-9]{2}:[0-9]{2}:[0-9]{2}(\\.[0-9]+)?Z$"
        }),
        Kind::Map => json!({"type": "object"}),
        Kind::Object(fields) => {
            let mut props = Map::new();
            let mut required = Vec::new();
            for f in fields.iter() {
                props.insert(f.name.to_string(), json_schema(&f.kind));
                if f.required {
                    required.push(json!(f.name));
                }
            }
            json!({"type": "object", "properties": props, "required": required})
        }
        Kind::Ref(inner) => json_schema(inner),
        Kind::List { item, non_empty } => {
            let mut m = Map::new();
            m.insert("type".into(), json!("array"));
            m.insert("items".into(), json_schema(item));
            if *non_empty {
                m.insert("minItems".into(), json!(1));
            }
            Value::Object(m)
        }
    }
}

/// Standalone document for one shape, as written by [`export_all`].
pub fn schema_document(name: &str, kind: &Kind) -> Value {
    let mut doc = Map::new();
    doc.insert("$schema".into(), json!("https://json-schema.org/draft/2020-12/schema"));
    doc.insert("title".into(), json!(name));
    if let Value::Object(body) = json_schema(kind) {
        doc.extend(body);
    }
    Value::Object(doc)
}

/// Writes `<name>.schema.json` for every exported shape into `dir`.
pub fn export_all(dir: &Path) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, kind) in exported() {
        let path = dir.join(format!("{name}.schema.json"));
        let mut text = serde_json::to_string_pretty(&schema_document(name, kind)).map_err(io::Error::other)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

/// Every exported shape, by file stem.
pub fn exported() -> Vec<(&'static str, &'static Kind)> {
    vec![
        ("rpc_request", &RPC_REQUEST),
        ("rpc_response", &RPC_RESPONSE),
        ("human_task_params", &HUMAN_TASK_PARAMS),
        ("human_task_result", &HUMAN_TASK_RESULT),
        ("delegation_params", &DELEGATION_PARAMS),
        ("delegation_result", &DELEGATION_RESULT),
        ("node_status_report", &NODE_STATUS_REPORT),
        ("task_assignment", &TASK_ASSIGNMENT),
        ("agent_metadata", &AGENT_METADATA),
        ("gossip_message", &GOSSIP_MESSAGE),
        ("register_node_params", &REGISTER_NODE_PARAMS),
        ("lookup_agent_params", &LOOKUP_AGENT_PARAMS),
        ("lookup_agent_result", &LOOKUP_AGENT_RESULT),
        ("registry_snapshot", &REGISTRY_SNAPSHOT),
        ("relay_task_params", &RELAY_TASK_PARAMS),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_every_offending_path() {
        let v = json!({"intent": "", "sender": {"id": "a"}, "recipient": {}, "task": {"name": 3}});
        let mut out = Vec::new();
        check(&DELEGATION_PARAMS, &v, "params", &mut out);
        let paths: Vec<_> = out.iter().map(|v| v.path.as_str()).collect();
        assert_eq!(paths, ["params.intent", "params.recipient.id", "params.task.name"]);
    }

    #[test]
    fn list_items_are_indexed() {
        let v = json!(["ok", ""]);
        let mut out = Vec::new();
        check(&Kind::List { item: &NON_EMPTY_ITEM, non_empty: true }, &v, "xs", &mut out);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].path, "xs[1]");
    }
}
