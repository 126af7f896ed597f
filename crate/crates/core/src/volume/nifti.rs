//! Minimal single-file NIfTI-1 reader.
//!
//! Only `dim`, `pixdim`, `datatype` and `vox_offset` are interpreted. Scaling,
//! orientation and intent fields are ignored; voxels are returned as stored.

use super::{Dims, IntensityKind, Result, ScalarType, Spacing, Volume3D, VolumeError};

const HEADER_SIZE: usize = 348;
const MIN_FILE_SIZE: usize = 352;

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_MAGIC: usize = 344;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

#[derive(Clone, Copy)]
struct Reader<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn i16(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        if self.big_endian { i16::from_be_bytes(b) } else { i16::from_le_bytes(b) }
    }

    fn i32(&self, off: usize) -> i32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        if self.big_endian { i32::from_be_bytes(b) } else { i32::from_le_bytes(b) }
    }

    fn f32(&self, off: usize) -> f32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        if self.big_endian { f32::from_be_bytes(b) } else { f32::from_le_bytes(b) }
    }
}

/// Parses a `.nii` byte buffer into a volume in HU (or `Uint8` for `u8` data).
pub fn parse_nifti(bytes: &[u8]) -> Result<Volume3D> {
    if bytes.len() < MIN_FILE_SIZE {
        return Err(VolumeError::TruncatedData { needed: MIN_FILE_SIZE, available: bytes.len() });
    }
    if &bytes[OFF_MAGIC..OFF_MAGIC + 4] != b"n+1\0" {
        return Err(VolumeError::BadMagic);
    }

    // dim[0] outside 1..=7 under little-endian reading means the header was written big-endian.
    let le = Reader { bytes, big_endian: false };
    let dim0 = le.i16(OFF_DIM);
    let rd = if (1..=7).contains(&dim0) { le } else { Reader { bytes, big_endian: true } };
    if rd.i32(0) != HEADER_SIZE as i32 {
        return Err(VolumeError::BadMagic);
    }
    let ndim = rd.i16(OFF_DIM);
    if !(1..=7).contains(&ndim) {
        return Err(VolumeError::InvalidDims(format!("dim[0] = {ndim}")));
    }

    let mut extent = [1usize; 3];
    for (axis, e) in extent.iter_mut().enumerate() {
        if axis < ndim as usize {
            let d = rd.i16(OFF_DIM + 2 * (axis + 1));
            if d < 1 {
                return Err(VolumeError::InvalidDims(format!("dim[{}] = {d}", axis + 1)));
            }
            *e = d as usize;
        }
    }
    // Trailing dimensions (time, components) must be singleton; only one volume per file is read.
    for axis in 4..=ndim as usize {
        let d = rd.i16(OFF_DIM + 2 * axis);
        if d > 1 {
            return Err(VolumeError::InvalidDims(format!("dim[{axis}] = {d}, only 3D volumes are supported")));
        }
    }
    let dims = Dims::from(extent);

    let mut spacing = [1.0f64; 3];
    for (axis, s) in spacing.iter_mut().enumerate() {
        if axis < ndim as usize {
            *s = f64::from(rd.f32(OFF_PIXDIM + 4 * (axis + 1))).abs();
        }
    }

    let datatype = rd.i16(OFF_DATATYPE);
    let scalar = match datatype {
        DT_UINT8 => ScalarType::U8,
        DT_INT16 => ScalarType::I16,
        DT_FLOAT32 => ScalarType::F32,
        other => return Err(VolumeError::UnsupportedScalarType(other)),
    };

    let vox_offset = rd.f32(OFF_VOX_OFFSET);
    if !(vox_offset.is_finite() && vox_offset >= 0.0) {
        return Err(VolumeError::InvalidDims(format!("vox_offset = {vox_offset}")));
    }
    let start = (vox_offset as usize).max(MIN_FILE_SIZE);
    let needed = start + dims.len() * scalar.size();
    if bytes.len() < needed {
        return Err(VolumeError::TruncatedData { needed: needed - start, available: bytes.len().saturating_sub(start) });
    }
    let data = &bytes[start..needed];

    let voxels: Vec<f32> = match scalar {
        ScalarType::U8 => data.iter().map(|&b| f32::from(b)).collect(),
        ScalarType::I16 => data
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                f32::from(if rd.big_endian { i16::from_be_bytes(b) } else { i16::from_le_bytes(b) })
            })
            .collect(),
        ScalarType::F32 => data
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                if rd.big_endian { f32::from_be_bytes(b) } else { f32::from_le_bytes(b) }
            })
            .collect(),
    };

    let kind = match scalar {
        ScalarType::U8 => IntensityKind::Uint8,
        _ => IntensityKind::Hu,
    };
    Volume3D::with_scalar(dims, Spacing::from(spacing), voxels, kind, scalar)
}
