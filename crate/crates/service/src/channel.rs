//! Logical channels multiplexed on one peer stream.
//!
//! Every message is `[channel: u8][len: u32 LE][payload]`. The data channel
//! carries JSON (pose, control, acknowledgements); the frame channel carries
//! frame packets and only flows from renderer to viewer.

use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

pub const MAX_MESSAGE_LEN: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Channel {
    Data = 0,
    Frame = 1,
}

impl Channel {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Channel::Data),
            1 => Some(Channel::Frame),
            _ => None,
        }
    }
}

pub async fn write_message<W: AsyncWrite + Unpin>(w: &mut W, channel: Channel, payload: &[u8]) -> std::io::Result<()> {
    if payload.len() > MAX_MESSAGE_LEN {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "message too large"));
    }
    let mut head = [0u8; 5];
    head[0] = channel as u8;
    head[1..].copy_from_slice(&(payload.len() as u32).to_le_bytes());
    w.write_all(&head).await?;
    w.write_all(payload).await?;
    w.flush().await
}

/// `Ok(None)` on a clean end of stream between messages.
pub async fn read_message<R: AsyncRead + Unpin>(r: &mut R) -> std::io::Result<Option<(Channel, Vec<u8>)>> {
    let mut head = [0u8; 5];
    match r.read_exact(&mut head[..1]).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    r.read_exact(&mut head[1..]).await?;
    let channel = Channel::from_byte(head[0])
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("unknown channel {}", head[0])))?;
    let len = u32::from_le_bytes(head[1..].try_into().unwrap()) as usize;
    if len > MAX_MESSAGE_LEN {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "message too large"));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).await?;
    Ok(Some((channel, payload)))
}
