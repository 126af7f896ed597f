//! JSON messages on the data channel of a peer stream.

use livervis_core::render::{Quat, Vec3};
use serde::{Deserialize, Serialize};

use crate::signaling::PeerId;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseUpdate {
    pub position: Vec3,
    /// Renormalized on receipt.
    pub rotation: Quat,
    pub timestamp_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformAction {
    /// `args` = quaternion `[x, y, z, w]`, applied after the current rotation.
    Rotate,
    /// `args` = `[dx, dy, dz]` in millimetres.
    Translate,
    /// `args` = `[factor]`, multiplies the current scale.
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum ControlOp {
    Transform {
        action: TransformAction,
        args: Vec<f64>,
    },
    /// Clip away everything below `offset` (fraction of the extent) along `axis`.
    Slice {
        axis: Axis,
        offset: f64,
    },
    Window {
        level: f64,
        width: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        brightness: Option<f64>,
    },
    Load {
        volume_id: String,
    },
    Unload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamMode {
    /// Frames are rendered only in answer to `request`.
    #[default]
    Pull,
    /// Frames are rendered continuously at the target rate.
    Push,
}

fn default_size() -> u16 {
    256
}

fn default_version() -> u32 {
    PROTOCOL_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ClientMessage {
    Hello {
        peer_id: PeerId,
        #[serde(default = "default_size")]
        width: u16,
        #[serde(default = "default_size")]
        height: u16,
        #[serde(default)]
        mode: StreamMode,
        #[serde(default = "default_version")]
        version: u32,
    },
    Pose(PoseUpdate),
    Control {
        #[serde(default)]
        seq: u64,
        #[serde(flatten)]
        op: ControlOp,
    },
    Request {
        count: u32,
    },
    Bye,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ServerMessage {
    Welcome {
        peer_id: PeerId,
        target_fps: f64,
        next_frame_id: u32,
        version: u32,
    },
    /// `applies_from_frame`: first frame id rendered with this pose.
    PoseAck {
        timestamp_us: u64,
        applied: bool,
        applies_from_frame: u32,
    },
    Ack {
        seq: u64,
        applies_from_frame: u32,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seq: Option<u64>,
        reason: String,
    },
}
