use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap};
use axum::response::IntoResponse;
use axum::routing::post;
use axum::Router;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use super::{check_pairing, dispatch_bytes, RpcHandler, RpcTransport, TransportError, HOPS_HEADER};
use crate::shutdown::ShutdownListener;
use crate::wire::{self, RpcRequest, RpcResponse};

async fn rpc_endpoint(
    State(handler): State<Arc<dyn RpcHandler>>,
    headers: HeaderMap,
    body: Bytes,
) -> impl IntoResponse {
    let hops = headers.get(HOPS_HEADER).and_then(|v| v.to_str().ok()).and_then(|v| v.parse().ok()).unwrap_or(0);
    let out = dispatch_bytes(&handler, &body, hops).await;
    ([(header::CONTENT_TYPE, "application/json")], out)
}

pub fn rpc_router(handler: Arc<dyn RpcHandler>) -> Router {
    Router::new().route("/rpc", post(rpc_endpoint)).with_state(handler)
}

/// Serves `router` until `stop` fires; in-flight requests finish first.
pub async fn serve(addr: &str, router: Router, stop: ShutdownListener) -> io::Result<(SocketAddr, JoinHandle<()>)> {
    serve_on(TcpListener::bind(addr).await?, router, stop)
}

pub fn serve_on(
    listener: TcpListener,
    router: Router,
    mut stop: ShutdownListener,
) -> io::Result<(SocketAddr, JoinHandle<()>)> {
    let local = listener.local_addr()?;
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, router).with_graceful_shutdown(async move { stop.wait().await }).await;
    });
    Ok((local, task))
}

/// JSON-RPC over `POST http://{endpoint}/rpc`.
#[derive(Clone)]
pub struct HttpTransport {
    client: reqwest::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let client =
            reqwest::Client::builder().timeout(timeout).pool_max_idle_per_host(64).build().expect("http client builds");
        HttpTransport { client }
    }
}

#[async_trait]
impl RpcTransport for HttpTransport {
    async fn call(&self, endpoint: &str, req: &RpcRequest, hops: u32) -> Result<RpcResponse, TransportError> {
        let body = wire::encode_request(req).map_err(|e| TransportError::Protocol(endpoint.into(), e.to_string()))?;
        let resp = self
            .client
            .post(format!("http://{endpoint}/rpc"))
            .header(header::CONTENT_TYPE, "application/json")
            .header(HOPS_HEADER, hops.to_string())
            .body(body)
            .send()
            .await
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout(endpoint.into())
                } else {
                    TransportError::Unreachable(endpoint.into(), e.to_string())
                }
            })?;
        let bytes = resp.bytes().await.map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout(endpoint.into())
            } else {
                TransportError::Protocol(endpoint.into(), e.to_string())
            }
        })?;
        let decoded =
            wire::decode_response(&bytes).map_err(|e| TransportError::Protocol(endpoint.into(), e.to_string()))?;
        check_pairing(endpoint, req, decoded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shutdown::Shutdown;
    use crate::wire::Params;
    use serde_json::json;

    struct Hops;

    #[async_trait]
    impl RpcHandler for Hops {
        async fn handle_rpc(&self, req: RpcRequest, hops: u32) -> RpcResponse {
            let mut p = Params::new();
            p.insert("hops".into(), json!(hops));
            RpcResponse::success(req.id, p)
        }
    }

    #[tokio::test]
    async fn round_trip_over_http() {
        let stop = Shutdown::new();
        let (addr, task) = serve("127.0.0.1:0", rpc_router(Arc::new(Hops)), stop.listener()).await.unwrap();
        let t = HttpTransport::new(Duration::from_secs(5));
        let req = RpcRequest::new("r1", "aios/health", Params::new());
        let resp = t.call(&addr.to_string(), &req, 3).await.unwrap();
        assert_eq!(resp.id, "r1");
        assert_eq!(resp.result.unwrap()["hops"], json!(3));
        stop.trigger();
        task.await.unwrap();
        // The port is free again after teardown.
        let again = serve(&addr.to_string(), Router::new(), Shutdown::new().listener()).await;
        assert!(again.is_ok());
    }

    #[tokio::test]
    async fn closed_port_is_unreachable() {
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let t = HttpTransport::new(Duration::from_secs(2));
        let req = RpcRequest::new("r1", "aios/health", Params::new());
        let err = t.call(&format!("127.0.0.1:{port}"), &req, 0).await.unwrap_err();
        assert!(matches!(err, TransportError::Unreachable(..)), "{err:?}");
    }
}
