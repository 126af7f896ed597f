//! Direct peer streams: one render session per accepted viewer.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::time::Instant;
use tokio_util::sync::CancellationToken;

use crate::channel::{read_message, write_message, Channel};
use crate::packet::encode_frame_packet;
use crate::protocol::{ClientMessage, ServerMessage, StreamMode, PROTOCOL_VERSION};
use crate::session::{PoseOutcome, SessionState, VolumeSource};
use crate::signaling::PeerId;

const MAX_SIDE: u16 = 2048;

/// Peers allowed to open a stream, each with a token that ends its session.
#[derive(Clone, Default)]
pub struct Admissions {
    inner: Arc<Mutex<(u64, HashMap<PeerId, (u64, CancellationToken)>)>>,
}

impl Admissions {
    pub fn admit(&self, peer: PeerId) -> CancellationToken {
        let token = CancellationToken::new();
        let mut g = self.inner.lock().unwrap();
        g.0 += 1;
        let generation = g.0;
        if let Some((_, old)) = g.1.insert(peer, (generation, token.clone())) {
            old.cancel();
        }
        token
    }

    fn take(&self, peer: PeerId) -> Option<(u64, CancellationToken)> {
        self.inner.lock().unwrap().1.get(&peer).cloned()
    }

    /// Forgets `peer` if it is still on admission `generation`.
    fn finish(&self, peer: PeerId, generation: u64) {
        let mut g = self.inner.lock().unwrap();
        if g.1.get(&peer).is_some_and(|(gen, _)| *gen == generation) {
            g.1.remove(&peer);
        }
    }

    /// Ends the session of `peer` and forgets it.
    pub fn revoke(&self, peer: PeerId) {
        if let Some((_, t)) = self.inner.lock().unwrap().1.remove(&peer) {
            t.cancel();
        }
    }

    /// Revokes every admitted peer not in `alive`.
    pub fn retain(&self, alive: &[PeerId]) {
        self.inner.lock().unwrap().1.retain(|id, (_, t)| {
            let keep = alive.contains(id);
            if !keep {
                t.cancel();
            }
            keep
        });
    }

    pub fn admitted(&self) -> Vec<PeerId> {
        let mut v: Vec<_> = self.inner.lock().unwrap().1.keys().copied().collect();
        v.sort_unstable();
        v
    }
}

#[derive(Clone)]
pub struct StreamSettings {
    pub target_fps: f64,
    /// A viewer must say hello within this long.
    pub hello_timeout: Duration,
}

pub struct StreamServer {
    pub local_addr: SocketAddr,
    pub admissions: Admissions,
    cancel: CancellationToken,
}

impl StreamServer {
    pub fn spawn(
        listener: TcpListener,
        settings: StreamSettings,
        volumes: Arc<dyn VolumeSource>,
        admissions: Admissions,
    ) -> std::io::Result<Self> {
        let local_addr = listener.local_addr()?;
        let cancel = CancellationToken::new();
        {
            let cancel = cancel.clone();
            let admissions = admissions.clone();
            tokio::spawn(async move {
                loop {
                    tokio::select! {
                        _ = cancel.cancelled() => break,
                        accepted = listener.accept() => match accepted {
                            Ok((stream, addr)) => {
                                let ctx = SessionContext {
                                    settings: settings.clone(),
                                    volumes: volumes.clone(),
                                    admissions: admissions.clone(),
                                    shutdown: cancel.child_token(),
                                };
                                tokio::spawn(async move {
                                    if let Err(e) = run_session(stream, ctx).await {
                                        tracing::debug!("session from {addr} ended: {e}");
                                    }
                                });
                            }
                            Err(e) => tracing::warn!("stream accept failed: {e}"),
                        }
                    }
                }
            });
        }
        Ok(Self { local_addr, admissions, cancel })
    }

    pub fn shutdown(&self) {
        self.cancel.cancel();
    }
}

impl Drop for StreamServer {
    fn drop(&mut self) {
        self.cancel.cancel();
    }
}

struct SessionContext {
    settings: StreamSettings,
    volumes: Arc<dyn VolumeSource>,
    admissions: Admissions,
    shutdown: CancellationToken,
}

fn now_us() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_micros() as u64).unwrap_or(0)
}

async fn send(wr: &mut OwnedWriteHalf, msg: &ServerMessage) -> std::io::Result<()> {
    write_message(wr, Channel::Data, &serde_json::to_vec(msg).expect("messages serialize")).await
}

fn invalid(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into())
}

async fn run_session(stream: TcpStream, ctx: SessionContext) -> std::io::Result<()> {
    let _ = stream.set_nodelay(true);
    let (mut rd, mut wr) = stream.into_split();

    let first = tokio::time::timeout(ctx.settings.hello_timeout, read_message(&mut rd))
        .await
        .map_err(|_| invalid("no hello"))??;
    let hello = first
        .filter(|(c, _)| *c == Channel::Data)
        .and_then(|(_, p)| serde_json::from_slice::<ClientMessage>(&p).ok());
    let Some(ClientMessage::Hello { peer_id, width, height, mode, version }) = hello else {
        send(&mut wr, &ServerMessage::Error { seq: None, reason: "expected-hello".into() }).await?;
        return Err(invalid("expected hello"));
    };
    if version != PROTOCOL_VERSION || width == 0 || height == 0 || width > MAX_SIDE || height > MAX_SIDE {
        send(&mut wr, &ServerMessage::Error { seq: None, reason: "bad-hello".into() }).await?;
        return Err(invalid("bad hello"));
    }
    let Some((generation, token)) = ctx.admissions.take(peer_id) else {
        send(&mut wr, &ServerMessage::Error { seq: None, reason: "not-admitted".into() }).await?;
        return Err(invalid(format!("peer {peer_id} not admitted")));
    };

    // Inbound messages are parsed on their own task so that a slow render never
    // stalls the socket; they are applied between frames.
    let (tx, mut rx) = mpsc::channel::<Result<ClientMessage, String>>(256);
    let reader = tokio::spawn(async move {
        loop {
            match read_message(&mut rd).await {
                Ok(Some((Channel::Data, p))) => {
                    let m = serde_json::from_slice::<ClientMessage>(&p).map_err(|e| e.to_string());
                    if tx.send(m).await.is_err() {
                        break;
                    }
                }
                Ok(Some((Channel::Frame, _))) => {
                    let _ = tx.send(Err("frames flow one way".into())).await;
                }
                Ok(None) | Err(_) => break,
            }
        }
    });

    let interval = Duration::from_secs_f64(1.0 / ctx.settings.target_fps);
    let (w, h) = (usize::from(width), usize::from(height));
    let mut state = SessionState::new();
    let mut next_frame_id: u32 = 0;
    let mut pending: u64 = 0;
    let mut next_allowed = Instant::now();

    send(
        &mut wr,
        &ServerMessage::Welcome { peer_id, target_fps: ctx.settings.target_fps, next_frame_id, version: PROTOCOL_VERSION },
    )
    .await?;

    let result: std::io::Result<()> = async {
        loop {
            let want_frame = state.scene().is_some() && (mode == StreamMode::Push || pending > 0);
            tokio::select! {
                biased;
                _ = token.cancelled() => break,
                _ = ctx.shutdown.cancelled() => break,
                m = rx.recv() => {
                    let Some(m) = m else { break };
                    match m {
                        Ok(ClientMessage::Pose(p)) => {
                            let outcome = state.apply_pose(&p);
                            if outcome == PoseOutcome::Malformed {
                                tracing::debug!("peer {peer_id}: malformed pose dropped");
                            }
                            let applied = outcome == PoseOutcome::Applied;
                            send(&mut wr, &ServerMessage::PoseAck { timestamp_us: p.timestamp_us, applied, applies_from_frame: next_frame_id }).await?;
                        }
                        Ok(ClientMessage::Control { seq, op }) => {
                            let reply = match state.apply_control(&op, ctx.volumes.as_ref()) {
                                Ok(()) => ServerMessage::Ack { seq, applies_from_frame: next_frame_id },
                                Err(e) => ServerMessage::Error { seq: Some(seq), reason: e.reason().into() },
                            };
                            if state.scene().is_none() {
                                pending = 0;
                            }
                            send(&mut wr, &reply).await?;
                        }
                        Ok(ClientMessage::Request { count }) => {
                            if state.scene().is_none() {
                                send(&mut wr, &ServerMessage::Error { seq: None, reason: "no-volume-loaded".into() }).await?;
                            } else {
                                pending = pending.saturating_add(u64::from(count));
                            }
                        }
                        Ok(ClientMessage::Bye) => break,
                        Ok(ClientMessage::Hello { .. }) => {
                            send(&mut wr, &ServerMessage::Error { seq: None, reason: "already-hello".into() }).await?;
                        }
                        Err(e) => {
                            tracing::debug!("peer {peer_id}: bad data message: {e}");
                            send(&mut wr, &ServerMessage::Error { seq: None, reason: "parse".into() }).await?;
                        }
                    }
                }
                _ = tokio::time::sleep_until(next_allowed), if want_frame => {
                    let started = Instant::now();
                    let snapshot = state.clone();
                    let rendered = tokio::task::spawn_blocking(move || snapshot.render(w, h))
                        .await
                        .map_err(|e| invalid(e.to_string()))?;
                    let Some(Ok(mut frame)) = rendered else {
                        send(&mut wr, &ServerMessage::Error { seq: None, reason: "render".into() }).await?;
                        pending = 0;
                        continue;
                    };
                    frame.frame_id = next_frame_id;
                    frame.timestamp_us = now_us();
                    next_frame_id = next_frame_id.checked_add(1).ok_or_else(|| invalid("frame id exhausted"))?;
                    write_message(&mut wr, Channel::Frame, &encode_frame_packet(&frame)).await?;
                    pending = pending.saturating_sub(1);
                    next_allowed = started + interval;
                }
            }
        }
        Ok(())
    }
    .await;

    reader.abort();
    ctx.admissions.finish(peer_id, generation);
    result
}
