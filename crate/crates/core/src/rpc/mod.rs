//! JSON-RPC plumbing shared by nodes and registries: the handler and
//! transport traits, an HTTP binding at `POST /rpc`, and an in-process
//! loopback binding.

mod http;
mod instrumented;
mod loopback;

pub use http::{rpc_router, serve, serve_on, HttpTransport};
pub use instrumented::{CallRecord, InstrumentedTransport};
pub use loopback::{LoopbackNetwork, LoopbackTransport};

use std::sync::Arc;

use async_trait::async_trait;
use serde_json::{json, Value};

use crate::wire::{self, codes, RpcRequest, RpcResponse, WireError};

/// Header carrying how many delegation hops a request has already taken.
pub const HOPS_HEADER: &str = "x-aios-hops";

#[async_trait]
pub trait RpcHandler: Send + Sync {
    async fn handle_rpc(&self, req: RpcRequest, hops: u32) -> RpcResponse;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("{0} unreachable: {1}")]
    Unreachable(String, String),
    #[error("request to {0} timed out")]
    Timeout(String),
    #[error("protocol error from {0}: {1}")]
    Protocol(String, String),
}

#[async_trait]
pub trait RpcTransport: Send + Sync {
    /// Sends `req` to the node serving at `endpoint` (`host:port`) and returns
    /// its response, whose id is checked against the request.
    async fn call(&self, endpoint: &str, req: &RpcRequest, hops: u32) -> Result<RpcResponse, TransportError>;
}

fn error_code(e: &WireError) -> i64 {
    match e {
        WireError::Parse(_) => codes::PARSE_ERROR,
        WireError::Invalid(v) | WireError::Refused(v) if v.iter().any(|v| v.path.starts_with("params")) => {
            codes::INVALID_PARAMS
        }
        _ => codes::INVALID_REQUEST,
    }
}

/// Decodes a request body, runs the handler and encodes its response.
/// Undecodable input still gets a JSON-RPC error body; its id is echoed when
/// it can be recovered and `null` otherwise.
pub async fn dispatch_bytes(handler: &Arc<dyn RpcHandler>, body: &[u8], hops: u32) -> Vec<u8> {
    let req = match wire::decode_request(body) {
        Ok(r) => r,
        Err(e) => {
            let id = serde_json::from_slice::<Value>(body)
                .ok()
                .and_then(|v| v.get("id").and_then(Value::as_str).map(str::to_string))
                .filter(|s| !s.is_empty());
            let msg = e.to_string();
            return match id {
                Some(id) => wire::encode_response(&wire::make_error_response(id, error_code(&e), msg))
                    .expect("error responses encode"),
                None => serde_json::to_vec(&json!({
                    "jsonrpc": wire::JSONRPC_VERSION,
                    "id": null,
                    "error": {"code": error_code(&e), "message": msg},
                }))
                .expect("json encodes"),
            };
        }
    };
    let id = req.id.clone();
    let resp = handler.handle_rpc(req, hops).await;
    let resp = if resp.id == id {
        resp
    } else {
        wire::make_error_response(id.clone(), codes::INTERNAL_ERROR, "handler answered with a different id")
    };
    wire::encode_response(&resp).unwrap_or_else(|e| {
        wire::encode_response(&wire::make_error_response(id, codes::INTERNAL_ERROR, e.to_string()))
            .expect("error responses encode")
    })
}

fn check_pairing(endpoint: &str, req: &RpcRequest, resp: RpcResponse) -> Result<RpcResponse, TransportError> {
    if resp.id == req.id {
        Ok(resp)
    } else {
        Err(TransportError::Protocol(endpoint.into(), format!("response id {:?} does not match {:?}", resp.id, req.id)))
    }
}
