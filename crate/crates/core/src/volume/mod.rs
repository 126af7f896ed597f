//! Voxel volumes and the 2D slices cut from them.
//!
//! A [`Volume3D`] stores its samples as `f32` in x-fastest order regardless of
//! the on-disk scalar type. The original [`ScalarType`] is remembered so that
//! writing the volume back out reproduces the source bytes exactly.

mod intensity;
mod nifti;
mod raw;

pub use intensity::{apply_window_level, clip_and_normalize, WindowLevel, DEFAULT_CLIP_HI, DEFAULT_CLIP_LO};
pub use nifti::parse_nifti;
pub use raw::{decode_raw, encode_raw, read_raw_sidecar, write_raw_sidecar, Endianness, VolumeSidecar};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("bad NIfTI magic or header size")]
    BadMagic,
    #[error("unsupported scalar type (NIfTI datatype {0})")]
    UnsupportedScalarType(i16),
    #[error("truncated voxel data: need {needed} bytes, have {available}")]
    TruncatedData { needed: usize, available: usize },
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("invalid spacing: {0:?}")]
    InvalidSpacing([f64; 3]),
    #[error("voxel buffer holds {actual} values, dims require {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("normalized voxel {value} at index {index} lies outside [0,1]")]
    OutOfUnitRange { index: usize, value: f32 },
    #[error("value {value} at index {index} is not representable as {scalar:?}")]
    NotRepresentable { index: usize, value: f32, scalar: ScalarType },
    #[error("raw file has {actual} bytes, sidecar implies {expected}")]
    SidecarMismatch { expected: usize, actual: usize },
    #[error("degenerate intensity range [{lo}, {hi}]")]
    DegenerateRange { lo: f64, hi: f64 },
    #[error("window width must be positive, got {0}")]
    InvalidWindow(f64),
    #[error("slice index {index} out of range for {len} slices")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimsMismatch(Dims, Dims),
    #[error("sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = VolumeError> = std::result::Result<T, E>;

/// Voxel counts along x, y, z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.nx;
        let y = (i / self.nx) % self.ny;
        let z = i / self.slice_len();
        (x, y, z)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(VolumeError::InvalidDims(format!("{:?}", self.as_array())));
        }
        Ok(())
    }
}

impl From<[usize; 3]> for Dims {
    fn from(d: [usize; 3]) -> Self {
        Self::new(d[0], d[1], d[2])
    }
}

impl From<Dims> for [usize; 3] {
    fn from(d: Dims) -> Self {
        d.as_array()
    }
}

/// Millimetres per voxel along x, y, z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Spacing {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl Spacing {
    pub const UNIT: Spacing = Spacing { sx: 1.0, sy: 1.0, sz: 1.0 };

    pub const fn new(sx: f64, sy: f64, sz: f64) -> Self {
        Self { sx, sy, sz }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }

    pub fn min(&self) -> f64 {
        self.sx.min(self.sy).min(self.sz)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.as_array().iter().all(|s| s.is_finite() && *s > 0.0);
        if ok {
            Ok(())
        } else {
            Err(VolumeError::InvalidSpacing(self.as_array()))
        }
    }
}

impl From<[f64; 3]> for Spacing {
    fn from(s: [f64; 3]) -> Self {
        Self::new(s[0], s[1], s[2])
    }
}

impl From<Spacing> for [f64; 3] {
    fn from(s: Spacing) -> Self {
        s.as_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityKind {
    /// Hounsfield units.
    #[serde(rename = "HU")]
    Hu,
    Normalized01,
    Uint8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    I16,
    U8,
    F32,
}

impl ScalarType {
    pub fn size(self) -> usize {
        match self {
            ScalarType::I16 => 2,
            ScalarType::U8 => 1,
            ScalarType::F32 => 4,
        }
    }

    fn representable(self, v: f32) -> bool {
        match self {
            ScalarType::F32 => true,
            ScalarType::I16 => v.fract() == 0.0 && (i16::MIN as f32..=i16::MAX as f32).contains(&v),
            ScalarType::U8 => v.fract() == 0.0 && (0.0..=255.0).contains(&v),
        }
    }
}

/// An immutable 3D voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    spacing: Spacing,
    voxels: Vec<f32>,
    kind: IntensityKind,
    scalar: ScalarType,
}

impl Volume3D {
    /// Builds a volume, choosing the narrowest natural storage type for the
    /// intensity kind (`u8` for [`IntensityKind::Uint8`], `f32` otherwise).
    pub fn new(dims: Dims, spacing: Spacing, voxels: Vec<f32>, kind: IntensityKind) -> Result<Self> {
        let scalar = match kind {
            IntensityKind::Uint8 => ScalarType::U8,
            _ => ScalarType::F32,
        };
        Self::with_scalar(dims, spacing, voxels, kind, scalar)
    }

    pub fn with_scalar(
        dims: Dims,
        spacing: Spacing,
        voxels: Vec<f32>,
        kind: IntensityKind,
        scalar: ScalarType,
    ) -> Result<Self> {
        dims.validate()?;
        spacing.validate()?;
        if voxels.len() != dims.len() {
            return Err(VolumeError::LengthMismatch { expected: dims.len(), actual: voxels.len() });
        }
        if kind == IntensityKind::Normalized01 {
            if let Some((index, &value)) =
                voxels.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(VolumeError::OutOfUnitRange { index, value });
            }
        }
        if let Some((index, &value)) = voxels.iter().enumerate().find(|(_, v)| !scalar.representable(**v)) {
            return Err(VolumeError::NotRepresentable { index, value, scalar });
        }
        Ok(Self { dims, spacing, voxels, kind, scalar })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    pub fn intensity_kind(&self) -> IntensityKind {
        self.kind
    }

    pub fn scalar_type(&self) -> ScalarType {
        self.scalar
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.dims.index(x, y, z)]
    }

    /// Copy of axial slice `z` as a row-major `nx` by `ny` image.
    pub fn slice(&self, z: usize) -> Result<Image2D<f32>> {
        if z >= self.dims.nz {
            return Err(VolumeError::IndexOutOfRange { index: z, len: self.dims.nz });
        }
        let n = self.dims.slice_len();
        Ok(Image2D {
            width: self.dims.nx,
            height: self.dims.ny,
            data: self.voxels[z * n..(z + 1) * n].to_vec(),
        })
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.voxels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// A row-major 2D image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Image2D<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "image buffer length");
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }
}

/// Three neighbouring axial slices centred on `center_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceTriplet {
    pub below: Image2D<f32>,
    pub center: Image2D<f32>,
    pub above: Image2D<f32>,
    pub center_index: usize,
}

/// Slices `i-1, i, i+1`; the edge slice is repeated at either end of the volume.
pub fn slice_triplet(vol: &Volume3D, i: usize) -> Result<SliceTriplet> {
    let nz = vol.dims().nz;
    if i >= nz {
        return Err(VolumeError::IndexOutOfRange { index: i, len: nz });
    }
    Ok(SliceTriplet {
        below: vol.slice(i.saturating_sub(1))?,
        center: vol.slice(i)?,
        above: vol.slice((i + 1).min(nz - 1))?,
        center_index: i,
    })
}

/// Discrete per-voxel labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    dims: Dims,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(dims: Dims, labels: Vec<u8>) -> Result<Self> {
        dims.validate()?;
        if labels.len() != dims.len() {
            return Err(VolumeError::LengthMismatch { expected: dims.len(), actual: labels.len() });
        }
        Ok(Self { dims, labels })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self { dims, labels: vec![0; dims.len()] }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> u8) -> Self {
        let mut labels = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    labels.push(f(x, y, z));
                }
            }
        }
        Self { dims, labels }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.dims.index(x, y, z)]
    }

    pub fn count_nonzero(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Nonzero labels become 1.
    pub fn binarize(&self) -> Self {
        Self { dims: self.dims, labels: self.labels.iter().map(|&l| u8::from(l != 0)).collect() }
    }

    pub fn slice(&self, z: usize) -> Image2D<u8> {
        let n = self.dims.slice_len();
        Image2D::new(self.dims.nx, self.dims.ny, self.labels[z * n..(z + 1) * n].to_vec())
    }

    pub fn to_volume(&self, spacing: Spacing) -> Result<Volume3D> {
        Volume3D::new(self.dims, spacing, self.labels.iter().map(|&l| l as f32).collect(), IntensityKind::Uint8)
    }

    /// Rounds each voxel to the nearest label; intended for volumes read from mask files.
    pub fn from_volume(vol: &Volume3D) -> Self {
        Self {
            dims: vol.dims(),
            labels: vol.voxels().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect(),
        }
    }
}

/// Per-voxel foreground probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    dims: Dims,
    values: Vec<f32>,
}

impl ProbabilityVolume {
    pub fn new(dims: Dims, values: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if values.len() != dims.len() {
            return Err(VolumeError::LengthMismatch { expected: dims.len(), actual: values.len() });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(VolumeError::OutOfUnitRange { index, value });
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Foreground where `p > 0.5`; ties go to background.
    pub fn argmax(&self) -> LabelMask {
        LabelMask { dims: self.dims, labels: self.values.iter().map(|&p| u8::from(p > 0.5)).collect() }
    }

    pub fn to_volume(&self, spacing: Spacing) -> Result<Volume3D> {
        Volume3D::new(self.dims, spacing, self.values.clone(), IntensityKind::Normalized01)
    }

    pub fn from_volume(vol: &Volume3D) -> Result<Self> {
        Self::new(vol.dims(), vol.voxels().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(nz: usize) -> Volume3D {
        let dims = Dims::new(2, 2, nz);
        let voxels = (0..dims.len()).map(|i| (i / 4) as f32).collect();
        Volume3D::new(dims, Spacing::UNIT, voxels, IntensityKind::Hu).unwrap()
    }

    #[test]
    fn triplet_interior() {
        let t = slice_triplet(&ramp(10), 5).unwrap();
        assert_eq!((t.below.data[0], t.center.data[0], t.above.data[0]), (4.0, 5.0, 6.0));
        assert_eq!(t.center_index, 5);
    }

    #[test]
    fn triplet_clamps_at_edges() {
        let v = ramp(10);
        let first = slice_triplet(&v, 0).unwrap();
        assert_eq!((first.below.data[0], first.center.data[0], first.above.data[0]), (0.0, 0.0, 1.0));
        let last = slice_triplet(&v, 9).unwrap();
        assert_eq!((last.below.data[0], last.center.data[0], last.above.data[0]), (8.0, 9.0, 9.0));
    }

    #[test]
    fn triplet_out_of_range() {
        assert!(matches!(slice_triplet(&ramp(10), 10), Err(VolumeError::IndexOutOfRange { index: 10, len: 10 })));
    }

    #[test]
    fn constructor_invariants() {
        let d = Dims::new(2, 1, 1);
        assert!(matches!(
            Volume3D::new(Dims::new(0, 1, 1), Spacing::UNIT, vec![], IntensityKind::Hu),
            Err(VolumeError::InvalidDims(_))
        ));
        assert!(matches!(
            Volume3D::new(d, Spacing::new(1.0, 0.0, 1.0), vec![0.0; 2], IntensityKind::Hu),
            Err(VolumeError::InvalidSpacing(_))
        ));
        assert!(matches!(
            Volume3D::new(d, Spacing::UNIT, vec![0.0; 3], IntensityKind::Hu),
            Err(VolumeError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Volume3D::new(d, Spacing::UNIT, vec![0.0, 1.5], IntensityKind::Normalized01),
            Err(VolumeError::OutOfUnitRange { index: 1, .. })
        ));
        assert!(matches!(
            Volume3D::with_scalar(d, Spacing::UNIT, vec![0.5, 1.0], IntensityKind::Hu, ScalarType::I16),
            Err(VolumeError::NotRepresentable { index: 0, .. })
        ));
    }

    #[test]
    fn dims_index_roundtrip() {
        let d = Dims::new(3, 4, 5);
        for i in 0..d.len() {
            let (x, y, z) = d.coords(i);
            assert_eq!(d.index(x, y, z), i);
        }
    }
}
