use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Weak};
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::RwLock;

use super::{check_pairing, dispatch_bytes, RpcHandler, RpcTransport, TransportError};
use crate::wire::{self, RpcRequest, RpcResponse};

/// Endpoint-name → handler table standing in for a network. Requests and
/// responses still go through the wire encoder, and each call runs on its
/// own task so a panicking handler cannot take the caller down.
#[derive(Default)]
pub struct LoopbackNetwork {
    handlers: RwLock<HashMap<String, Weak<dyn RpcHandler>>>,
    down: RwLock<HashSet<String>>,
}

impl LoopbackNetwork {
    pub fn new() -> Arc<Self> {
        Arc::new(LoopbackNetwork::default())
    }

    pub fn bind(&self, endpoint: impl Into<String>, handler: &Arc<dyn RpcHandler>) {
        self.handlers.write().insert(endpoint.into(), Arc::downgrade(handler));
    }

    pub fn unbind(&self, endpoint: &str) {
        self.handlers.write().remove(endpoint);
    }

    pub fn set_down(&self, endpoint: &str, down: bool) {
        if down {
            self.down.write().insert(endpoint.to_string());
        } else {
            self.down.write().remove(endpoint);
        }
    }

    pub fn transport(self: &Arc<Self>, timeout: Duration) -> Arc<LoopbackTransport> {
        Arc::new(LoopbackTransport { net: Arc::clone(self), timeout })
    }
}

pub struct LoopbackTransport {
    net: Arc<LoopbackNetwork>,
    timeout: Duration,
}

#[async_trait]
impl RpcTransport for LoopbackTransport {
    async fn call(&self, endpoint: &str, req: &RpcRequest, hops: u32) -> Result<RpcResponse, TransportError> {
        let unreachable = || TransportError::Unreachable(endpoint.into(), "no handler bound".into());
        if self.net.down.read().contains(endpoint) {
            return Err(unreachable());
        }
        let handler = self.net.handlers.read().get(endpoint).and_then(Weak::upgrade).ok_or_else(unreachable)?;
        let body = wire::encode_request(req).map_err(|e| TransportError::Protocol(endpoint.into(), e.to_string()))?;
        let task = tokio::spawn(async move { dispatch_bytes(&handler, &body, hops).await });
        let bytes = match tokio::time::timeout(self.timeout, task).await {
            Err(_) => return Err(TransportError::Timeout(endpoint.into())),
            Ok(Err(join)) => return Err(TransportError::Protocol(endpoint.into(), join.to_string())),
            Ok(Ok(bytes)) => bytes,
        };
        let resp =
            wire::decode_response(&bytes).map_err(|e| TransportError::Protocol(endpoint.into(), e.to_string()))?;
        check_pairing(endpoint, req, resp)
    }
}
