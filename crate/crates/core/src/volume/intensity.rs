use serde::{Deserialize, Serialize};

use super::{Image2D, IntensityKind, Result, ScalarType, Volume3D, VolumeError};

/// Lower clip bound in HU applied before normalization.
pub const DEFAULT_CLIP_LO: f64 = -150.0;
/// Upper clip bound in HU applied before normalization.
pub const DEFAULT_CLIP_HI: f64 = 250.0;

/// Clamps every voxel to `[lo, hi]` and maps that interval affinely onto `[0, 1]`.
pub fn clip_and_normalize(vol: &Volume3D, lo: f64, hi: f64) -> Result<Volume3D> {
    if !(lo < hi) {
        return Err(VolumeError::DegenerateRange { lo, hi });
    }
    let range = hi - lo;
    let voxels = vol
        .voxels()
        .iter()
        .map(|&v| ((f64::from(v).clamp(lo, hi) - lo) / range) as f32)
        .collect();
    Volume3D::with_scalar(vol.dims(), vol.spacing(), voxels, IntensityKind::Normalized01, ScalarType::F32)
}

/// Display window: `level` is the mid-grey value, `width` the displayed range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowLevel {
    pub level: f64,
    pub width: f64,
}

impl WindowLevel {
    pub fn new(level: f64, width: f64) -> Result<Self> {
        if width > 0.0 && width.is_finite() && level.is_finite() {
            Ok(Self { level, width })
        } else {
            Err(VolumeError::InvalidWindow(width))
        }
    }

    /// Window covering `[lo, hi]`.
    pub fn from_range(lo: f64, hi: f64) -> Result<Self> {
        Self::new(0.5 * (lo + hi), hi - lo)
    }

    pub fn low(&self) -> f64 {
        self.level - 0.5 * self.width
    }

    pub fn high(&self) -> f64 {
        self.level + 0.5 * self.width
    }

    /// Position of `value` inside the window, clamped to `[0, 1]`.
    #[inline]
    pub fn fraction(&self, value: f64) -> f64 {
        ((value - self.low()) / self.width).clamp(0.0, 1.0)
    }

    /// Grey level in `0..=255`, rounding half up.
    #[inline]
    pub fn gray(&self, value: f64) -> u8 {
        let v = value;
        if v <= self.low() {
            0
        } else if v >= self.high() {
            255
        } else {
            (255.0 * self.fraction(v) + 0.5).floor() as u8
        }
    }
}

/// Maps an HU image to 8-bit grey through a window.
pub fn apply_window_level(slice: &Image2D<f32>, wl: WindowLevel) -> Image2D<u8> {
    Image2D::new(slice.width, slice.height, slice.data.iter().map(|&v| wl.gray(f64::from(v))).collect())
}
