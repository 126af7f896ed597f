//! Headless protocol client: signaling handshake plus a viewer stream. Used by
//! the render peer to talk to signaling, and by tests in place of a browser.

use std::collections::VecDeque;
use std::net::SocketAddr;

use futures::{SinkExt, StreamExt};
use livervis_core::render::RenderFrame;
use thiserror::Error;
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio_util::codec::{FramedRead, FramedWrite, LinesCodec, LinesCodecError};

use crate::channel::{read_message, write_message, Channel};
use crate::packet::{decode_frame_packet, PacketError};
use crate::protocol::{ClientMessage, ControlOp, PoseUpdate, ServerMessage, StreamMode, PROTOCOL_VERSION};
use crate::signaling::{PeerId, PeerInfo, Role, SignalMessage};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("connection closed")]
    Closed,
    #[error("unexpected message: {0}")]
    Unexpected(String),
    #[error(transparent)]
    Packet(#[from] PacketError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<LinesCodecError> for ClientError {
    fn from(e: LinesCodecError) -> Self {
        match e {
            LinesCodecError::Io(e) => ClientError::Io(e),
            other => ClientError::Unexpected(other.to_string()),
        }
    }
}

pub struct SignalReader {
    lines: FramedRead<OwnedReadHalf, LinesCodec>,
}

impl SignalReader {
    pub async fn recv(&mut self) -> Result<SignalMessage, ClientError> {
        loop {
            let line = self.lines.next().await.ok_or(ClientError::Closed)??;
            if !line.trim().is_empty() {
                return Ok(serde_json::from_str(&line)?);
            }
        }
    }
}

pub struct SignalWriter {
    lines: FramedWrite<OwnedWriteHalf, LinesCodec>,
}

impl SignalWriter {
    pub async fn send(&mut self, msg: &SignalMessage) -> Result<(), ClientError> {
        self.lines.send(serde_json::to_string(msg)?).await?;
        Ok(())
    }

    /// Sends a raw line, bypassing serialization.
    pub async fn send_raw(&mut self, line: &str) -> Result<(), ClientError> {
        self.lines.send(line).await?;
        Ok(())
    }
}

pub struct SignalConnection {
    pub reader: SignalReader,
    pub writer: SignalWriter,
}

impl SignalConnection {
    pub async fn connect(addr: SocketAddr) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).await?;
        let _ = stream.set_nodelay(true);
        let (rd, wr) = stream.into_split();
        Ok(Self {
            reader: SignalReader { lines: FramedRead::new(rd, LinesCodec::new_with_max_length(64 * 1024)) },
            writer: SignalWriter { lines: FramedWrite::new(wr, LinesCodec::new()) },
        })
    }

    pub async fn send(&mut self, msg: &SignalMessage) -> Result<(), ClientError> {
        self.writer.send(msg).await
    }

    pub async fn recv(&mut self) -> Result<SignalMessage, ClientError> {
        self.reader.recv().await
    }

    /// Registers and returns the assigned id. Messages before the reply are discarded.
    pub async fn register(&mut self, name: &str, role: Role, endpoint: Option<String>) -> Result<PeerId, ClientError> {
        self.send(&SignalMessage::Register { name: name.into(), role, endpoint }).await?;
        loop {
            match self.recv().await? {
                SignalMessage::Registered { peer_id } => return Ok(peer_id),
                SignalMessage::Error { reason } => return Err(ClientError::Rejected(reason)),
                _ => {}
            }
        }
    }

    /// Waits for a peer list that satisfies `pred`.
    pub async fn wait_peer_list(&mut self, pred: impl Fn(&[PeerInfo]) -> bool) -> Result<Vec<PeerInfo>, ClientError> {
        loop {
            if let SignalMessage::PeerList { peers } = self.recv().await? {
                if pred(&peers) {
                    return Ok(peers);
                }
            }
        }
    }

    /// Asks `target` for a stream and returns its endpoint once accepted.
    pub async fn connect_to(&mut self, target: PeerId) -> Result<String, ClientError> {
        self.send(&SignalMessage::ConnectRequest { target_id: target, peer_id: None }).await?;
        loop {
            match self.recv().await? {
                SignalMessage::ConnectAccept { peer_id: Some(p), endpoint, .. } if p == target => {
                    return endpoint.ok_or_else(|| ClientError::Unexpected("accept without endpoint".into()));
                }
                SignalMessage::Error { reason } => return Err(ClientError::Rejected(reason)),
                _ => {}
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamEvent {
    Frame(RenderFrame),
    Message(ServerMessage),
}

/// Viewer side of a direct peer stream.
pub struct ViewerStream {
    rd: OwnedReadHalf,
    wr: OwnedWriteHalf,
    frames: VecDeque<RenderFrame>,
    messages: VecDeque<ServerMessage>,
}

impl ViewerStream {
    /// Connects and says hello; returns the stream and the server's welcome.
    pub async fn connect(endpoint: &str, peer_id: PeerId, width: u16, height: u16, mode: StreamMode) -> Result<(Self, ServerMessage), ClientError> {
        let stream = TcpStream::connect(endpoint).await?;
        let _ = stream.set_nodelay(true);
        let (rd, wr) = stream.into_split();
        let mut s = Self { rd, wr, frames: VecDeque::new(), messages: VecDeque::new() };
        s.send(&ClientMessage::Hello { peer_id, width, height, mode, version: PROTOCOL_VERSION }).await?;
        match s.next_message().await? {
            w @ ServerMessage::Welcome { .. } => Ok((s, w)),
            ServerMessage::Error { reason, .. } => Err(ClientError::Rejected(reason)),
            other => Err(ClientError::Unexpected(format!("{other:?}"))),
        }
    }

    pub async fn send(&mut self, msg: &ClientMessage) -> Result<(), ClientError> {
        write_message(&mut self.wr, Channel::Data, &serde_json::to_vec(msg)?).await?;
        Ok(())
    }

    /// Writes arbitrary bytes on a channel, for malformed-input tests.
    pub async fn send_raw(&mut self, channel: Channel, payload: &[u8]) -> Result<(), ClientError> {
        write_message(&mut self.wr, channel, payload).await?;
        Ok(())
    }

    async fn read_event(&mut self) -> Result<StreamEvent, ClientError> {
        match read_message(&mut self.rd).await? {
            None => Err(ClientError::Closed),
            Some((Channel::Frame, p)) => Ok(StreamEvent::Frame(decode_frame_packet(&p)?)),
            Some((Channel::Data, p)) => Ok(StreamEvent::Message(serde_json::from_slice(&p)?)),
        }
    }

    pub async fn next_event(&mut self) -> Result<StreamEvent, ClientError> {
        if let Some(f) = self.frames.pop_front() {
            return Ok(StreamEvent::Frame(f));
        }
        if let Some(m) = self.messages.pop_front() {
            return Ok(StreamEvent::Message(m));
        }
        self.read_event().await
    }

    /// Next frame; data messages that arrive first are kept for [`Self::next_message`].
    pub async fn next_frame(&mut self) -> Result<RenderFrame, ClientError> {
        if let Some(f) = self.frames.pop_front() {
            return Ok(f);
        }
        loop {
            match self.read_event().await? {
                StreamEvent::Frame(f) => return Ok(f),
                StreamEvent::Message(m) => self.messages.push_back(m),
            }
        }
    }

    /// Next data message; frames that arrive first are kept for [`Self::next_frame`].
    pub async fn next_message(&mut self) -> Result<ServerMessage, ClientError> {
        if let Some(m) = self.messages.pop_front() {
            return Ok(m);
        }
        loop {
            match self.read_event().await? {
                StreamEvent::Message(m) => return Ok(m),
                StreamEvent::Frame(f) => self.frames.push_back(f),
            }
        }
    }

    /// Sends a control op and waits for its ack or error.
    pub async fn control(&mut self, seq: u64, op: ControlOp) -> Result<ServerMessage, ClientError> {
        self.send(&ClientMessage::Control { seq, op }).await?;
        loop {
            match self.next_message().await? {
                m @ ServerMessage::Ack { seq: s, .. } if s == seq => return Ok(m),
                m @ ServerMessage::Error { seq: Some(s), .. } if s == seq => return Ok(m),
                _ => {}
            }
        }
    }

    /// Sends a pose and waits for its acknowledgement.
    pub async fn pose(&mut self, pose: PoseUpdate) -> Result<ServerMessage, ClientError> {
        self.send(&ClientMessage::Pose(pose)).await?;
        loop {
            match self.next_message().await? {
                m @ ServerMessage::PoseAck { timestamp_us, .. } if timestamp_us == pose.timestamp_us => return Ok(m),
                _ => {}
            }
        }
    }

    /// Pull mode: asks for `n` frames and collects them.
    pub async fn request_frames(&mut self, n: u32) -> Result<Vec<RenderFrame>, ClientError> {
        self.send(&ClientMessage::Request { count: n }).await?;
        let mut out = Vec::with_capacity(n as usize);
        for _ in 0..n {
            out.push(self.next_frame().await?);
        }
        Ok(out)
    }
}

/// A viewer that went through the whole rendezvous.
pub struct ViewerSession {
    pub signal: SignalConnection,
    pub stream: ViewerStream,
    pub peer_id: PeerId,
    pub server_id: PeerId,
}

/// Registers as a client, connects to the first render server in the peer
/// list, and opens the peer stream.
pub async fn open_viewer(signal_addr: SocketAddr, name: &str, width: u16, height: u16, mode: StreamMode) -> Result<ViewerSession, ClientError> {
    let mut signal = SignalConnection::connect(signal_addr).await?;
    let peer_id = signal.register(name, Role::Client, None).await?;
    let peers = signal.wait_peer_list(|p| p.iter().any(|i| i.role == Role::Server)).await?;
    let server_id = peers.iter().find(|i| i.role == Role::Server).map(|i| i.peer_id).expect("checked");
    let endpoint = signal.connect_to(server_id).await?;
    let (stream, _) = ViewerStream::connect(&endpoint, peer_id, width, height, mode).await?;
    Ok(ViewerSession { signal, stream, peer_id, server_id })
}
