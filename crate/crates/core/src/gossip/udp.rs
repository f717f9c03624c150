use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, OnceLock, Weak};

use async_trait::async_trait;
use tokio::net::UdpSocket;
use tokio::task::JoinHandle;
use tracing::{debug, warn};

use super::service::{GossipService, GossipTransport};
use super::GossipError;
use crate::dht::MAX_DATAGRAM;
use crate::shutdown::ShutdownListener;
use crate::wire::{self, GossipMessage};

/// GossipMessage JSON, one per datagram.
pub struct UdpGossipTransport {
    socket: UdpSocket,
    handler: OnceLock<Weak<GossipService>>,
}

impl UdpGossipTransport {
    pub async fn bind(addr: &str) -> io::Result<Arc<Self>> {
        Ok(Arc::new(UdpGossipTransport { socket: UdpSocket::bind(addr).await?, handler: OnceLock::new() }))
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    pub fn attach(&self, service: &Arc<GossipService>) {
        let _ = self.handler.set(Arc::downgrade(service));
    }

    pub fn spawn(self: &Arc<Self>, mut stop: ShutdownListener) -> JoinHandle<()> {
        let this = Arc::clone(self);
        tokio::spawn(async move {
            let mut buf = vec![0u8; 64 * 1024];
            loop {
                let (n, src) = tokio::select! {
                    _ = stop.wait() => break,
                    r = this.socket.recv_from(&mut buf) => match r {
                        Ok(x) => x,
                        Err(e) => {
                            debug!(error = %e, "gossip recv error");
                            continue;
                        }
                    },
                };
                if n > MAX_DATAGRAM {
                    warn!(%src, bytes = n, "oversized gossip datagram dropped");
                    continue;
                }
                let msg: GossipMessage = match wire::decode_shape(&buf[..n]) {
                    Ok(m) => m,
                    Err(e) => {
                        debug!(%src, error = %e, "undecodable gossip datagram");
                        continue;
                    }
                };
                let Some(service) = this.handler.get().and_then(Weak::upgrade) else { continue };
                tokio::spawn(async move {
                    service.receive(msg, &src.to_string()).await;
                });
            }
        })
    }
}

#[async_trait]
impl GossipTransport for UdpGossipTransport {
    async fn send(&self, to: &str, msg: &GossipMessage) -> Result<(), GossipError> {
        let bytes = wire::encode_shape(msg).map_err(|e| GossipError::Send(to.into(), e.to_string()))?;
        if bytes.len() > MAX_DATAGRAM {
            return Err(GossipError::DatagramTooLarge(bytes.len()));
        }
        self.socket.send_to(&bytes, to).await.map(|_| ()).map_err(|e| GossipError::Send(to.into(), e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use super::*;
    use crate::gossip::{GossipConfig, GossipState};
    use crate::shutdown::Shutdown;
    use crate::time::{system_clock, Timestamp};

    #[tokio::test]
    async fn registration_crosses_real_sockets() {
        let stop = Shutdown::new();
        let ta = UdpGossipTransport::bind("127.0.0.1:0").await.unwrap();
        let tb = UdpGossipTransport::bind("127.0.0.1:0").await.unwrap();
        let (pa, pb) = (ta.local_addr().unwrap().port(), tb.local_addr().unwrap().port());
        let ca = GossipConfig::new("a", "127.0.0.1", pa).with_seeds([format!("127.0.0.1:{pb}")]);
        let cb = GossipConfig::new("b", "127.0.0.1", pb);
        let a = GossipService::new(GossipState::new(ca, 1, Timestamp::now()).unwrap(), ta.clone(), system_clock());
        let b = GossipService::new(GossipState::new(cb, 2, Timestamp::now()).unwrap(), tb.clone(), system_clock());
        ta.attach(&a);
        tb.attach(&b);
        let h = [ta.spawn(stop.listener()), tb.spawn(stop.listener())];
        a.register_agent("example/math_agent", vec!["arithmetic".into()]).await.unwrap();
        let mut found = None;
        for _ in 0..100 {
            found = b.find_agent("example/math_agent");
            if found.is_some() {
                break;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        assert_eq!(found.unwrap().node_id, "a");
        // b learned a's address from the datagram source.
        assert!(b.peers().iter().any(|p| p.port == pa));
        stop.trigger();
        for j in h {
            j.await.unwrap();
        }
    }
}
