use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::Mutex;

use super::{RpcTransport, TransportError};
use crate::wire::{RpcRequest, RpcResponse};

#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub endpoint: String,
    pub method: String,
    pub id: String,
    pub hops: u32,
    pub ok: bool,
}

/// Wraps a transport and records every call made through it.
pub struct InstrumentedTransport {
    inner: Arc<dyn RpcTransport>,
    log: Mutex<Vec<CallRecord>>,
}

impl InstrumentedTransport {
    pub fn new(inner: Arc<dyn RpcTransport>) -> Arc<Self> {
        Arc::new(InstrumentedTransport { inner, log: Mutex::new(Vec::new()) })
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.log.lock().clone()
    }

    pub fn count(&self) -> usize {
        self.log.lock().len()
    }

    /// Calls whose method is `method`.
    pub fn count_method(&self, method: &str) -> usize {
        self.log.lock().iter().filter(|c| c.method == method).count()
    }

    pub fn reset(&self) {
        self.log.lock().clear();
    }
}

#[async_trait]
impl RpcTransport for InstrumentedTransport {
    async fn call(&self, endpoint: &str, req: &RpcRequest, hops: u32) -> Result<RpcResponse, TransportError> {
        let out = self.inner.call(endpoint, req, hops).await;
        self.log.lock().push(CallRecord {
            endpoint: endpoint.to_string(),
            method: req.method.clone(),
            id: req.id.clone(),
            hops,
            ok: out.is_ok(),
        });
        out
    }
}
