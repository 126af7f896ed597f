//! Rendezvous protocol: peers register, discover each other through peer lists,
//! and exchange stream endpoints with a connect-request / connect-accept
//! handshake. Frame data never passes through here.
//!
//! [`Registry`] is a pure state machine driven by a caller-supplied clock in
//! milliseconds; [`server`] wraps it in a newline-delimited JSON TCP service.

pub mod server;

pub use server::SignalingServer;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub type PeerId = u32;
/// Transport connection handle, assigned by the server.
pub type ConnId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Client,
    Server,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeerState {
    Registered,
    Connected,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerRecord {
    pub peer_id: PeerId,
    pub name: String,
    pub role: Role,
    pub last_heartbeat_ms: u64,
    pub state: PeerState,
    pub endpoint: Option<String>,
    pub conn: ConnId,
}

/// Public view of a peer, as sent in `peer-list`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerInfo {
    pub peer_id: PeerId,
    pub name: String,
    pub role: Role,
    pub state: PeerState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SignalMessage {
    Register {
        name: String,
        role: Role,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<String>,
    },
    Registered {
        peer_id: PeerId,
    },
    PeerList {
        peers: Vec<PeerInfo>,
    },
    /// Sent by the initiator with `target_id`; forwarded to the target with
    /// `peer_id` set to the initiator.
    ConnectRequest {
        target_id: PeerId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        peer_id: Option<PeerId>,
    },
    /// Sent by the accepting peer with `target_id` = initiator; delivered to
    /// both sides with `peer_id` = the other side and its stream endpoint.
    ConnectAccept {
        target_id: PeerId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        peer_id: Option<PeerId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<String>,
    },
    Heartbeat,
    Bye,
    Error {
        reason: String,
    },
}

impl SignalMessage {
    pub fn error(reason: &str) -> Self {
        SignalMessage::Error { reason: reason.to_string() }
    }
}

/// Outbound message for one connection. `close` asks the transport to drop it after sending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub to: ConnId,
    pub msg: Option<SignalMessage>,
    pub close: bool,
}

impl Envelope {
    fn send(to: ConnId, msg: SignalMessage) -> Self {
        Self { to, msg: Some(msg), close: false }
    }
}

#[derive(Debug, Clone)]
pub struct Registry {
    max_peers: usize,
    heartbeat_timeout_ms: u64,
    next_id: PeerId,
    peers: BTreeMap<PeerId, PeerRecord>,
    by_conn: HashMap<ConnId, PeerId>,
    /// Outstanding `(initiator, target)` requests.
    pending: BTreeSet<(PeerId, PeerId)>,
}

impl Registry {
    pub fn new(max_peers: usize, heartbeat_timeout_ms: u64) -> Self {
        Self {
            max_peers,
            heartbeat_timeout_ms,
            next_id: 1,
            peers: BTreeMap::new(),
            by_conn: HashMap::new(),
            pending: BTreeSet::new(),
        }
    }

    pub fn get(&self, id: PeerId) -> Option<&PeerRecord> {
        self.peers.get(&id)
    }

    pub fn peer_of(&self, conn: ConnId) -> Option<PeerId> {
        self.by_conn.get(&conn).copied()
    }

    fn live(&self) -> impl Iterator<Item = &PeerRecord> {
        self.peers.values().filter(|p| p.state != PeerState::Closed)
    }

    pub fn client_count(&self) -> usize {
        self.live().filter(|p| p.role == Role::Client).count()
    }

    pub fn peer_list(&self) -> Vec<PeerInfo> {
        self.live()
            .map(|p| PeerInfo { peer_id: p.peer_id, name: p.name.clone(), role: p.role, state: p.state })
            .collect()
    }

    fn broadcast_peer_list(&self, out: &mut Vec<Envelope>) {
        let peers = self.peer_list();
        out.extend(self.live().map(|p| Envelope::send(p.conn, SignalMessage::PeerList { peers: peers.clone() })));
    }

    /// Applies one inbound message from `conn` at time `now_ms`.
    pub fn handle(&mut self, conn: ConnId, msg: SignalMessage, now_ms: u64) -> Vec<Envelope> {
        let mut out = Vec::new();
        let from = self.peer_of(conn);
        match (msg, from) {
            (SignalMessage::Register { name, role, endpoint }, None) => {
                if role == Role::Client && self.client_count() >= self.max_peers {
                    out.push(Envelope::send(conn, SignalMessage::error("peer-limit")));
                    return out;
                }
                let peer_id = self.next_id;
                self.next_id += 1;
                self.peers.insert(
                    peer_id,
                    PeerRecord { peer_id, name, role, last_heartbeat_ms: now_ms, state: PeerState::Registered, endpoint, conn },
                );
                self.by_conn.insert(conn, peer_id);
                out.push(Envelope::send(conn, SignalMessage::Registered { peer_id }));
                self.broadcast_peer_list(&mut out);
            }
            (SignalMessage::Register { .. }, Some(_)) => out.push(Envelope::send(conn, SignalMessage::error("already-registered"))),
            (_, None) => out.push(Envelope::send(conn, SignalMessage::error("not-registered"))),
            (SignalMessage::ConnectRequest { target_id, .. }, Some(me)) => match self.live_peer(target_id).map(|t| t.conn) {
                Some(target_conn) if target_id != me => {
                    self.pending.insert((me, target_id));
                    self.touch(me, now_ms);
                    out.push(Envelope::send(target_conn, SignalMessage::ConnectRequest { target_id, peer_id: Some(me) }));
                }
                _ => out.push(Envelope::send(conn, SignalMessage::error("unknown-target"))),
            },
            (SignalMessage::ConnectAccept { target_id, .. }, Some(me)) => {
                if self.live_peer(target_id).is_none() {
                    out.push(Envelope::send(conn, SignalMessage::error("unknown-target")));
                } else if !self.pending.remove(&(target_id, me)) {
                    out.push(Envelope::send(conn, SignalMessage::error("no-request")));
                } else {
                    self.touch(me, now_ms);
                    for id in [me, target_id] {
                        self.peers.get_mut(&id).expect("live").state = PeerState::Connected;
                    }
                    let (a, b) = (&self.peers[&me], &self.peers[&target_id]);
                    out.push(Envelope::send(
                        b.conn,
                        SignalMessage::ConnectAccept { target_id, peer_id: Some(me), endpoint: a.endpoint.clone() },
                    ));
                    out.push(Envelope::send(
                        a.conn,
                        SignalMessage::ConnectAccept { target_id: me, peer_id: Some(target_id), endpoint: b.endpoint.clone() },
                    ));
                    self.broadcast_peer_list(&mut out);
                }
            }
            (SignalMessage::Heartbeat, Some(me)) => self.touch(me, now_ms),
            (SignalMessage::Bye, Some(me)) => {
                self.close(me);
                out.push(Envelope { to: conn, msg: None, close: true });
                self.broadcast_peer_list(&mut out);
            }
            (_, Some(_)) => out.push(Envelope::send(conn, SignalMessage::error("unexpected-message"))),
        }
        out
    }

    /// Reply for a line that did not parse: report and drop the connection.
    pub fn parse_error(&mut self, conn: ConnId) -> Vec<Envelope> {
        let mut out = vec![Envelope { to: conn, msg: Some(SignalMessage::error("parse")), close: true }];
        if let Some(id) = self.peer_of(conn) {
            self.close(id);
            self.broadcast_peer_list(&mut out);
        }
        out
    }

    /// The transport lost `conn`.
    pub fn disconnect(&mut self, conn: ConnId) -> Vec<Envelope> {
        let mut out = Vec::new();
        if let Some(id) = self.peer_of(conn) {
            if self.peers[&id].state != PeerState::Closed {
                self.close(id);
                self.broadcast_peer_list(&mut out);
            }
        }
        self.by_conn.remove(&conn);
        out
    }

    /// Evicts peers silent for longer than the heartbeat timeout.
    pub fn sweep(&mut self, now_ms: u64) -> Vec<Envelope> {
        let expired: Vec<PeerId> = self
            .live()
            .filter(|p| now_ms.saturating_sub(p.last_heartbeat_ms) > self.heartbeat_timeout_ms)
            .map(|p| p.peer_id)
            .collect();
        let mut out = Vec::new();
        for id in &expired {
            out.push(Envelope { to: self.peers[id].conn, msg: None, close: true });
            self.close(*id);
        }
        if !expired.is_empty() {
            self.broadcast_peer_list(&mut out);
        }
        out
    }

    fn live_peer(&self, id: PeerId) -> Option<&PeerRecord> {
        self.peers.get(&id).filter(|p| p.state != PeerState::Closed)
    }

    fn touch(&mut self, id: PeerId, now_ms: u64) {
        if let Some(p) = self.peers.get_mut(&id) {
            p.last_heartbeat_ms = p.last_heartbeat_ms.max(now_ms);
        }
    }

    fn close(&mut self, id: PeerId) {
        if let Some(p) = self.peers.get_mut(&id) {
            p.state = PeerState::Closed;
            self.by_conn.remove(&p.conn);
        }
        self.pending.retain(|&(a, b)| a != id && b != id);
    }
}
