use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use futures::StreamExt;
use tokio::io::AsyncWriteExt;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio_util::codec::{FramedRead, LinesCodec};
use tokio_util::sync::CancellationToken;

use super::{ConnId, Envelope, Registry, SignalMessage};

const MAX_LINE: usize = 64 * 1024;

enum Outbound {
    Line(String),
    Close,
}

struct Shared {
    registry: Registry,
    conns: HashMap<ConnId, mpsc::UnboundedSender<Outbound>>,
    next_conn: ConnId,
}

impl Shared {
    fn dispatch(&self, envelopes: Vec<Envelope>) {
        for e in envelopes {
            let Some(tx) = self.conns.get(&e.to) else { continue };
            if let Some(m) = e.msg {
                let _ = tx.send(Outbound::Line(serde_json::to_string(&m).expect("messages serialize")));
            }
            if e.close {
                let _ = tx.send(Outbound::Close);
            }
        }
    }
}

/// Handle to a running signaling server.
pub struct SignalingServer {
    pub local_addr: SocketAddr,
    shared: Arc<Mutex<Shared>>,
    cancel: CancellationToken,
}

impl SignalingServer {
    /// Starts accepting on `listener`; peers silent for `heartbeat_timeout` are evicted.
    pub fn spawn(listener: TcpListener, max_peers: usize, heartbeat_timeout: Duration) -> std::io::Result<Self> {
        let local_addr = listener.local_addr()?;
        let shared = Arc::new(Mutex::new(Shared {
            registry: Registry::new(max_peers, heartbeat_timeout.as_millis() as u64),
            conns: HashMap::new(),
            next_conn: 1,
        }));
        let cancel = CancellationToken::new();
        let start = Instant::now();
        let clock = move || start.elapsed().as_millis() as u64;

        let sweep_every = (heartbeat_timeout / 4).clamp(Duration::from_millis(10), Duration::from_secs(1));
        {
            let shared = shared.clone();
            let cancel = cancel.clone();
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(sweep_every);
                loop {
                    tokio::select! {
                        _ = cancel.cancelled() => break,
                        _ = tick.tick() => {
                            let mut s = shared.lock().unwrap();
                            let out = s.registry.sweep(clock());
                            s.dispatch(out);
                        }
                    }
                }
            });
        }
        {
            let shared = shared.clone();
            let cancel = cancel.clone();
            tokio::spawn(async move {
                loop {
                    tokio::select! {
                        _ = cancel.cancelled() => break,
                        accepted = listener.accept() => match accepted {
                            Ok((stream, _)) => {
                                tokio::spawn(serve_connection(stream, shared.clone(), cancel.child_token(), clock));
                            }
                            Err(e) => tracing::warn!("signaling accept failed: {e}"),
                        }
                    }
                }
            });
        }
        Ok(Self { local_addr, shared, cancel })
    }

    /// Snapshot of the registry for inspection.
    pub fn registry(&self) -> Registry {
        self.shared.lock().unwrap().registry.clone()
    }

    pub fn shutdown(&self) {
        self.cancel.cancel();
    }
}

impl Drop for SignalingServer {
    fn drop(&mut self) {
        self.cancel.cancel();
    }
}

async fn serve_connection(stream: TcpStream, shared: Arc<Mutex<Shared>>, cancel: CancellationToken, clock: impl Fn() -> u64) {
    let _ = stream.set_nodelay(true);
    let (rd, mut wr) = stream.into_split();
    let (tx, mut rx) = mpsc::unbounded_channel();
    let conn = {
        let mut s = shared.lock().unwrap();
        let id = s.next_conn;
        s.next_conn += 1;
        s.conns.insert(id, tx);
        id
    };

    let writer_done = cancel.clone();
    let writer = tokio::spawn(async move {
        while let Some(o) = rx.recv().await {
            match o {
                Outbound::Line(mut line) => {
                    line.push('\n');
                    if wr.write_all(line.as_bytes()).await.is_err() {
                        break;
                    }
                }
                Outbound::Close => break,
            }
        }
        let _ = wr.shutdown().await;
        writer_done.cancel();
    });

    let mut lines = FramedRead::new(rd, LinesCodec::new_with_max_length(MAX_LINE));
    loop {
        let next = tokio::select! {
            _ = cancel.cancelled() => break,
            next = lines.next() => next,
        };
        let Some(line) = next else { break };
        let parsed = line.map_err(|e| e.to_string()).and_then(|l| {
            if l.trim().is_empty() {
                Ok(None)
            } else {
                serde_json::from_str::<SignalMessage>(&l).map(Some).map_err(|e| e.to_string())
            }
        });
        let mut s = shared.lock().unwrap();
        match parsed {
            Ok(None) => {}
            Ok(Some(msg)) => {
                let out = s.registry.handle(conn, msg, clock());
                s.dispatch(out);
            }
            Err(e) => {
                tracing::debug!("signaling conn {conn}: {e}");
                let out = s.registry.parse_error(conn);
                s.dispatch(out);
                break;
            }
        }
    }

    {
        let mut s = shared.lock().unwrap();
        let out = s.registry.disconnect(conn);
        s.dispatch(out);
        // dropping the sender lets the writer drain queued lines and exit
        s.conns.remove(&conn);
    }
    let _ = writer.await;
}
