//! Headerless `.raw` voxel files described by a JSON sidecar.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dims, IntensityKind, Result, ScalarType, Spacing, Volume3D, VolumeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endianness {
    Little,
    Big,
}

/// Description of a companion `.raw` file. Unknown JSON fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeSidecar {
    pub dims: Dims,
    pub spacing: Spacing,
    pub scalar_type: ScalarType,
    pub endianness: Endianness,
    pub intensity_kind: IntensityKind,
}

impl VolumeSidecar {
    pub fn for_volume(vol: &Volume3D) -> Self {
        Self {
            dims: vol.dims(),
            spacing: vol.spacing(),
            scalar_type: vol.scalar_type(),
            endianness: Endianness::Little,
            intensity_kind: vol.intensity_kind(),
        }
    }

    pub fn byte_len(&self) -> usize {
        self.dims.len() * self.scalar_type.size()
    }
}

/// Serializes voxels in the sidecar's scalar type and byte order.
pub fn encode_raw(vol: &Volume3D, endianness: Endianness) -> Vec<u8> {
    let big = endianness == Endianness::Big;
    let mut out = Vec::with_capacity(vol.dims().len() * vol.scalar_type().size());
    match vol.scalar_type() {
        ScalarType::U8 => out.extend(vol.voxels().iter().map(|&v| v as u8)),
        ScalarType::I16 => {
            for &v in vol.voxels() {
                let v = v as i16;
                out.extend_from_slice(&if big { v.to_be_bytes() } else { v.to_le_bytes() });
            }
        }
        ScalarType::F32 => {
            for &v in vol.voxels() {
                out.extend_from_slice(&if big { v.to_be_bytes() } else { v.to_le_bytes() });
            }
        }
    }
    out
}

pub fn decode_raw(bytes: &[u8], sidecar: &VolumeSidecar) -> Result<Volume3D> {
    let expected = sidecar.byte_len();
    if bytes.len() != expected {
        return Err(VolumeError::SidecarMismatch { expected, actual: bytes.len() });
    }
    let big = sidecar.endianness == Endianness::Big;
    let voxels: Vec<f32> = match sidecar.scalar_type {
        ScalarType::U8 => bytes.iter().map(|&b| f32::from(b)).collect(),
        ScalarType::I16 => bytes
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                f32::from(if big { i16::from_be_bytes(b) } else { i16::from_le_bytes(b) })
            })
            .collect(),
        ScalarType::F32 => bytes
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                if big { f32::from_be_bytes(b) } else { f32::from_le_bytes(b) }
            })
            .collect(),
    };
    Volume3D::with_scalar(sidecar.dims, sidecar.spacing, voxels, sidecar.intensity_kind, sidecar.scalar_type)
}

pub fn write_raw_sidecar(vol: &Volume3D, raw_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<()> {
    let sidecar = VolumeSidecar::for_volume(vol);
    fs::write(raw_path, encode_raw(vol, sidecar.endianness))?;
    fs::write(sidecar_path, serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_raw_sidecar(raw_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<Volume3D> {
    let sidecar: VolumeSidecar = serde_json::from_slice(&fs::read(sidecar_path)?)?;
    decode_raw(&fs::read(raw_path)?, &sidecar)
}
