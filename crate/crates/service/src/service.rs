//! Wires signaling, the stream listener, and the render peer into one server.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;

use crate::client::{ClientError, SignalConnection};
use crate::config::ServerConfig;
use crate::session::VolumeSource;
use crate::signaling::{PeerId, PeerState, Role, SignalMessage, SignalingServer};
use crate::stream::{Admissions, StreamServer, StreamSettings};

/// The render server's presence on signaling. Accepts every connect request
/// by admitting the requester to the stream listener.
pub struct RenderPeer {
    pub peer_id: PeerId,
    cancel: CancellationToken,
    task: Option<JoinHandle<()>>,
}

impl RenderPeer {
    pub async fn spawn(
        signal_addr: SocketAddr,
        name: &str,
        endpoint: String,
        admissions: Admissions,
        heartbeat_every: Duration,
    ) -> Result<Self, ClientError> {
        let mut conn = SignalConnection::connect(signal_addr).await?;
        let peer_id = conn.register(name, Role::Server, Some(endpoint)).await?;
        let cancel = CancellationToken::new();
        let token = cancel.clone();
        let task = tokio::spawn(async move {
            let SignalConnection { mut reader, mut writer } = conn;
            let mut tick = tokio::time::interval(heartbeat_every);
            loop {
                tokio::select! {
                    _ = token.cancelled() => {
                        let _ = writer.send(&SignalMessage::Bye).await;
                        break;
                    }
                    _ = tick.tick() => {
                        if writer.send(&SignalMessage::Heartbeat).await.is_err() {
                            break;
                        }
                    }
                    msg = reader.recv() => match msg {
                        Ok(SignalMessage::ConnectRequest { peer_id: Some(from), .. }) => {
                            admissions.admit(from);
                            let accept = SignalMessage::ConnectAccept { target_id: from, peer_id: None, endpoint: None };
                            if writer.send(&accept).await.is_err() {
                                break;
                            }
                        }
                        Ok(SignalMessage::PeerList { peers }) => {
                            let alive: Vec<PeerId> =
                                peers.iter().filter(|p| p.state != PeerState::Closed).map(|p| p.peer_id).collect();
                            admissions.retain(&alive);
                        }
                        Ok(SignalMessage::Error { reason }) => tracing::warn!("signaling error: {reason}"),
                        Ok(_) => {}
                        Err(e) => {
                            tracing::warn!("lost signaling: {e}");
                            break;
                        }
                    }
                }
            }
            admissions.retain(&[]);
        });
        Ok(Self { peer_id, cancel, task: Some(task) })
    }

    /// Says bye and waits for the task to end.
    pub async fn stop(mut self) {
        self.cancel.cancel();
        if let Some(t) = self.task.take() {
            let _ = t.await;
        }
    }
}

impl Drop for RenderPeer {
    fn drop(&mut self) {
        self.cancel.cancel();
    }
}

pub struct Service {
    pub signaling: SignalingServer,
    pub stream: StreamServer,
    pub render_peer: RenderPeer,
}

impl Service {
    /// Binds both listeners from `cfg` and registers the render peer.
    pub async fn start(cfg: &ServerConfig, volumes: Arc<dyn VolumeSource>) -> Result<Self, ClientError> {
        cfg.validate().map_err(|e| ClientError::Unexpected(e.to_string()))?;
        let timeout = Duration::from_millis(cfg.heartbeat_timeout_ms());
        let signaling = SignalingServer::spawn(TcpListener::bind(&cfg.listen.signaling).await?, cfg.max_peers, timeout)?;
        let admissions = Admissions::default();
        let settings = StreamSettings { target_fps: cfg.target_fps, hello_timeout: timeout };
        let stream = StreamServer::spawn(TcpListener::bind(&cfg.listen.stream).await?, settings, volumes, admissions.clone())?;
        let render_peer = RenderPeer::spawn(
            signaling.local_addr,
            "render-server",
            stream.local_addr.to_string(),
            admissions,
            (timeout / 3).max(Duration::from_millis(5)),
        )
        .await?;
        tracing::info!("signaling on {}, stream on {}", signaling.local_addr, stream.local_addr);
        Ok(Self { signaling, stream, render_peer })
    }

    pub fn signaling_addr(&self) -> SocketAddr {
        self.signaling.local_addr
    }

    pub async fn stop(self) {
        self.render_peer.stop().await;
        self.stream.shutdown();
        self.signaling.shutdown();
    }
}
