use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock, Weak};
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use tokio::net::UdpSocket;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tracing::{debug, warn};

use super::node::{Dht, DhtRpc};
use super::proto::{self, DhtQuery, DhtReply, MAX_DATAGRAM};
use super::routing::Contact;
use super::DhtError;
use crate::shutdown::ShutdownListener;
use crate::wire::{self, Message, RpcResponse};

/// DHT queries as JSON-RPC datagrams. One socket both serves inbound queries
/// and carries our own outbound calls; replies are matched by request id.
pub struct UdpDhtTransport {
    socket: Arc<UdpSocket>,
    pending: Mutex<HashMap<String, oneshot::Sender<RpcResponse>>>,
    next_id: AtomicU64,
    timeout: Duration,
    handler: OnceLock<Weak<Dht>>,
}

impl UdpDhtTransport {
    pub async fn bind(addr: &str, timeout: Duration) -> io::Result<Arc<Self>> {
        let socket = UdpSocket::bind(addr).await?;
        Ok(Arc::new(UdpDhtTransport {
            socket: Arc::new(socket),
            pending: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            timeout,
            handler: OnceLock::new(),
        }))
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    /// Routes inbound queries to `dht`. Only the first attach takes effect.
    pub fn attach(&self, dht: &Arc<Dht>) {
        let _ = self.handler.set(Arc::downgrade(dht));
    }

    pub fn spawn(self: &Arc<Self>, mut stop: ShutdownListener) -> JoinHandle<()> {
        let this = Arc::clone(self);
        tokio::spawn(async move {
            let mut buf = vec![0u8; 64 * 1024];
            loop {
                tokio::select! {
                    _ = stop.wait() => break,
                    received = this.socket.recv_from(&mut buf) => match received {
                        Ok((n, src)) if n <= MAX_DATAGRAM => this.dispatch(&buf[..n], src),
                        Ok((n, src)) => warn!(%src, bytes = n, "oversized dht datagram dropped"),
                        Err(e) => debug!(error = %e, "dht recv error"),
                    },
                }
            }
        })
    }

    fn dispatch(self: &Arc<Self>, bytes: &[u8], src: SocketAddr) {
        match wire::decode(bytes) {
            Ok(Message::Response(resp)) => {
                if let Some(tx) = self.pending.lock().remove(&resp.id) {
                    let _ = tx.send(resp);
                }
            }
            Ok(Message::Request(req)) => {
                let Some(dht) = self.handler.get().and_then(Weak::upgrade) else { return };
                let this = Arc::clone(self);
                tokio::spawn(async move {
                    let resp = match DhtQuery::from_request(&req) {
                        Ok((sender, query)) => dht.handle(&sender, query).await.to_response(req.id.clone()),
                        Err(e) => proto::error_response(&req.id, &e),
                    };
                    if let Ok(bytes) = wire::encode_response(&resp) {
                        if bytes.len() <= MAX_DATAGRAM {
                            let _ = this.socket.send_to(&bytes, src).await;
                        } else {
                            warn!(bytes = bytes.len(), "dht reply exceeds datagram limit");
                        }
                    }
                });
            }
            Err(e) => debug!(%src, error = %e, "undecodable dht datagram"),
        }
    }
}

#[async_trait]
impl DhtRpc for UdpDhtTransport {
    async fn call(&self, from: &Contact, to: &Contact, query: DhtQuery) -> Result<DhtReply, DhtError> {
        let id = format!("dht-{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let bytes =
            wire::encode_request(&query.to_request(id.clone(), from)).map_err(|e| DhtError::Protocol(e.to_string()))?;
        if bytes.len() > MAX_DATAGRAM {
            return Err(DhtError::DatagramTooLarge(bytes.len()));
        }
        let addr = tokio::net::lookup_host(to.addr())
            .await
            .ok()
            .and_then(|mut it| it.next())
            .ok_or_else(|| DhtError::Unreachable(to.addr()))?;
        let (tx, rx) = oneshot::channel();
        self.pending.lock().insert(id.clone(), tx);
        if self.socket.send_to(&bytes, addr).await.is_err() {
            self.pending.lock().remove(&id);
            return Err(DhtError::Unreachable(to.addr()));
        }
        match tokio::time::timeout(self.timeout, rx).await {
            Ok(Ok(resp)) => DhtReply::from_response(&resp),
            _ => {
                self.pending.lock().remove(&id);
                Err(DhtError::Timeout(to.addr()))
            }
        }
    }
}
