//! DHT queries mapped onto the JSON-RPC envelope (`dht/ping`, `dht/store`,
//! `dht/findNode`, `dht/findValue`).

use serde_json::{json, Value};

use super::node::StoreRecord;
use super::routing::Contact;
use super::{DhtError, NodeId};
use crate::wire::{make_error_response, Params, RpcRequest, RpcResponse};

/// Largest datagram either side will send.
pub const MAX_DATAGRAM: usize = 8 * 1024;

pub const PING: &str = "dht/ping";
pub const STORE: &str = "dht/store";
pub const FIND_NODE: &str = "dht/findNode";
pub const FIND_VALUE: &str = "dht/findValue";

#[derive(Debug, Clone, PartialEq)]
pub enum DhtQuery {
    Ping,
    Store { key: String, value: Params },
    FindNode { target: NodeId },
    FindValue { key: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DhtReply {
    /// Carries the responder's contact, so a peer known only by address
    /// can be identified.
    Pong(Contact),
    Stored,
    Nodes(Vec<Contact>),
    Value(StoreRecord),
}

fn protocol(e: impl std::fmt::Display) -> DhtError {
    DhtError::Protocol(e.to_string())
}

impl DhtQuery {
    pub fn method(&self) -> &'static str {
        match self {
            DhtQuery::Ping => PING,
            DhtQuery::Store { .. } => STORE,
            DhtQuery::FindNode { .. } => FIND_NODE,
            DhtQuery::FindValue { .. } => FIND_VALUE,
        }
    }

    pub fn to_request(&self, id: impl Into<String>, sender: &Contact) -> RpcRequest {
        let mut params = Params::new();
        params.insert("sender".into(), serde_json::to_value(sender).expect("contact serializes"));
        match self {
            DhtQuery::Ping => {}
            DhtQuery::Store { key, value } => {
                params.insert("key".into(), json!(key));
                params.insert("value".into(), Value::Object(value.clone()));
            }
            DhtQuery::FindNode { target } => {
                params.insert("target".into(), json!(target));
            }
            DhtQuery::FindValue { key } => {
                params.insert("key".into(), json!(key));
            }
        }
        RpcRequest::new(id, self.method(), params)
    }

    pub fn from_request(req: &RpcRequest) -> Result<(Contact, DhtQuery), DhtError> {
        let sender: Contact =
            serde_json::from_value(req.params.get("sender").cloned().unwrap_or(Value::Null)).map_err(protocol)?;
        let key = || -> Result<String, DhtError> {
            match req.params.get("key").and_then(Value::as_str) {
                Some(k) if !k.is_empty() => Ok(k.to_string()),
                _ => Err(DhtError::EmptyKey),
            }
        };
        let query = match req.method.as_str() {
            PING => DhtQuery::Ping,
            STORE => DhtQuery::Store {
                key: key()?,
                value: req
                    .params
                    .get("value")
                    .and_then(Value::as_object)
                    .cloned()
                    .ok_or_else(|| protocol("store without value object"))?,
            },
            FIND_NODE => DhtQuery::FindNode {
                target: serde_json::from_value(req.params.get("target").cloned().unwrap_or(Value::Null))
                    .map_err(protocol)?,
            },
            FIND_VALUE => DhtQuery::FindValue { key: key()? },
            other => return Err(protocol(format!("unknown method {other}"))),
        };
        Ok((sender, query))
    }
}

impl DhtReply {
    pub fn to_response(&self, id: impl Into<String>) -> RpcResponse {
        let mut result = Params::new();
        match self {
            DhtReply::Pong(me) => {
                result.insert("pong".into(), serde_json::to_value(me).expect("contact serializes"));
            }
            DhtReply::Stored => {
                result.insert("stored".into(), json!(true));
            }
            DhtReply::Nodes(nodes) => {
                result.insert("nodes".into(), serde_json::to_value(nodes).expect("contacts serialize"));
            }
            DhtReply::Value(record) => {
                result.insert("record".into(), serde_json::to_value(record).expect("record serializes"));
            }
        }
        RpcResponse::success(id, result)
    }

    pub fn from_response(resp: &RpcResponse) -> Result<DhtReply, DhtError> {
        if let Some(err) = &resp.error {
            return Err(DhtError::Protocol(format!("{} ({})", err.message, err.code)));
        }
        let result = resp.result.as_ref().ok_or_else(|| protocol("response without result"))?;
        if let Some(record) = result.get("record") {
            return serde_json::from_value(record.clone()).map(DhtReply::Value).map_err(protocol);
        }
        if let Some(nodes) = result.get("nodes") {
            return serde_json::from_value(nodes.clone()).map(DhtReply::Nodes).map_err(protocol);
        }
        if result.get("stored").is_some() {
            return Ok(DhtReply::Stored);
        }
        if let Some(me) = result.get("pong") {
            return serde_json::from_value(me.clone()).map(DhtReply::Pong).map_err(protocol);
        }
        Err(protocol("unrecognized dht result"))
    }
}

pub fn error_response(id: &str, err: &DhtError) -> RpcResponse {
    make_error_response(id, crate::wire::codes::INVALID_PARAMS, err.to_string())
}
