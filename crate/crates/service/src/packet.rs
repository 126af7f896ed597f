//! Binary frame packet: a 26-byte little-endian header followed by the pixel payload.
//!
//! ```text
//! offset  size  field
//!      0     4  magic 0x33445354 ("TSD3" on the wire)
//!      4     1  version (1)
//!      5     4  frame_id
//!      9     2  width
//!     11     2  height
//!     13     1  pixel_format (0 = RGB8, 1 = RGBA8)
//!     14     8  timestamp_us
//!     22     4  payload_len
//!     26     …  payload
//! ```

use livervis_core::render::{PixelFormat, RenderFrame};
use thiserror::Error;

pub const MAGIC: u32 = 0x3344_5354;
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 26;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PacketError {
    #[error("bad magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported packet version {0}")]
    UnsupportedVersion(u8),
    #[error("length mismatch: header says {declared} payload bytes, {actual} present")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("unknown pixel format {0}")]
    UnknownPixelFormat(u8),
}

fn format_code(f: PixelFormat) -> u8 {
    match f {
        PixelFormat::Rgb8 => 0,
        PixelFormat::Rgba8 => 1,
    }
}

/// Pixel payload transformation. Raw is the only codec; the slot exists so a
/// compressed one can be swapped in without touching the header.
pub trait PayloadCodec {
    fn encode(&self, pixels: &[u8]) -> Vec<u8>;
    fn decode(&self, payload: &[u8]) -> Vec<u8>;
}

pub struct RawCodec;

impl PayloadCodec for RawCodec {
    fn encode(&self, pixels: &[u8]) -> Vec<u8> {
        pixels.to_vec()
    }

    fn decode(&self, payload: &[u8]) -> Vec<u8> {
        payload.to_vec()
    }
}

pub fn encode_frame_packet(frame: &RenderFrame) -> Vec<u8> {
    encode_with(frame, &RawCodec)
}

pub fn decode_frame_packet(bytes: &[u8]) -> Result<RenderFrame, PacketError> {
    decode_with(bytes, &RawCodec)
}

pub fn encode_with(frame: &RenderFrame, codec: &dyn PayloadCodec) -> Vec<u8> {
    let payload = codec.encode(&frame.pixels);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.push(VERSION);
    out.extend_from_slice(&frame.frame_id.to_le_bytes());
    out.extend_from_slice(&frame.width.to_le_bytes());
    out.extend_from_slice(&frame.height.to_le_bytes());
    out.push(format_code(frame.pixel_format));
    out.extend_from_slice(&frame.timestamp_us.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn decode_with(bytes: &[u8], codec: &dyn PayloadCodec) -> Result<RenderFrame, PacketError> {
    if bytes.len() < HEADER_LEN {
        // a short buffer cannot even hold the declared length
        if bytes.len() >= 4 {
            let magic = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
            if magic != MAGIC {
                return Err(PacketError::BadMagic(magic));
            }
        }
        return Err(PacketError::LengthMismatch { declared: 0, actual: bytes.len() });
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let magic = u32_at(0);
    if magic != MAGIC {
        return Err(PacketError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(PacketError::UnsupportedVersion(bytes[4]));
    }
    let pixel_format = match bytes[13] {
        0 => PixelFormat::Rgb8,
        1 => PixelFormat::Rgba8,
        other => return Err(PacketError::UnknownPixelFormat(other)),
    };
    let declared = u32_at(22) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != declared {
        return Err(PacketError::LengthMismatch { declared, actual: payload.len() });
    }
    let frame = RenderFrame {
        frame_id: u32_at(5),
        width: u16_at(9),
        height: u16_at(11),
        pixel_format,
        timestamp_us: u64::from_le_bytes(bytes[14..22].try_into().unwrap()),
        pixels: codec.decode(payload),
    };
    if !frame.is_consistent() {
        let expected = frame.width as usize * frame.height as usize * pixel_format.bytes_per_pixel();
        return Err(PacketError::LengthMismatch { declared: expected, actual: frame.pixels.len() });
    }
    Ok(frame)
}
