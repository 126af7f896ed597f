use serde::{Deserialize, Serialize};

use crate::volume::WindowLevel;

pub const TABLE_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Palette {
    #[default]
    Grayscale,
}

/// Intensity to `(r, g, b, a)` lookup spanning one display window.
///
/// Entry `j` covers the intensity `window.low() + j / 255 * window.width`;
/// intensities outside the window use the first or last entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    window: WindowLevel,
    palette: Palette,
    brightness: f64,
    table: Vec<[f32; 4]>,
}

impl TransferFunction {
    pub fn new(window: WindowLevel, palette: Palette, brightness: f64) -> Self {
        let brightness = if brightness.is_finite() { brightness.max(0.0) } else { 0.0 };
        let table = (0..TABLE_SIZE)
            .map(|j| {
                let g = j as f64 / (TABLE_SIZE - 1) as f64;
                let v = (g * brightness).clamp(0.0, 1.0) as f32;
                match palette {
                    Palette::Grayscale => [v, v, v, v],
                }
            })
            .collect();
        Self { window, palette, brightness, table }
    }

    pub fn window(&self) -> WindowLevel {
        self.window
    }

    pub fn palette(&self) -> Palette {
        self.palette
    }

    pub fn brightness(&self) -> f64 {
        self.brightness
    }

    pub fn entries(&self) -> &[[f32; 4]] {
        &self.table
    }

    #[inline]
    fn position(&self, value: f64) -> f64 {
        self.window.fraction(value) * (TABLE_SIZE - 1) as f64
    }

    /// Linearly interpolated table lookup.
    #[inline]
    pub fn lookup(&self, value: f64) -> [f32; 4] {
        let pos = self.position(value);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(TABLE_SIZE - 1);
        let t = (pos - lo as f64) as f32;
        let (a, b) = (self.table[lo], self.table[hi]);
        if t == 0.0 {
            return a;
        }
        [
            a[0] + (b[0] - a[0]) * t,
            a[1] + (b[1] - a[1]) * t,
            a[2] + (b[2] - a[2]) * t,
            a[3] + (b[3] - a[3]) * t,
        ]
    }

    /// Largest opacity any intensity in `[lo, hi]` can produce.
    pub fn max_alpha(&self, lo: f64, hi: f64) -> f32 {
        let a = self.position(lo).floor() as usize;
        let b = (self.position(hi).ceil() as usize).min(TABLE_SIZE - 1);
        self.table[a..=b].iter().map(|e| e[3]).fold(0.0, f32::max)
    }
}

/// Greyscale transfer function for `wl` scaled by `brightness`.
pub fn build_transfer_function(wl: WindowLevel, palette: Palette, brightness: f64) -> TransferFunction {
    TransferFunction::new(wl, palette, brightness)
}
