//! Browser bindings for three small demos over the core library: raycasting
//! the abdomen phantom, refining a noisy sphere with the CRF, and viewing a
//! windowed axial slice. Pixels cross the boundary as RGBA bytes ready for
//! `ImageData`.

use std::sync::Arc;

use livervis_core::crf::{mean_field_refine, CrfParams};
use livervis_core::metrics::score_masks;
use livervis_core::phantom::{abdomen_phantom, noisy_sphere, NoisySphere};
use livervis_core::render::{
    build_transfer_function, render_frame, Camera, ClipPlane, Palette, PixelFormat, Projection, Quat, RenderFrame, SceneState, Vec3,
};
use livervis_core::volume::{apply_window_level, WindowLevel};
use livervis_core::{LabelMask, Volume3D};
use wasm_bindgen::prelude::*;

/// Camera on a sphere around the volume centre, `yaw` about +Y then `pitch` about +X.
pub fn orbit_camera(extent_mm: f64, yaw_deg: f64, pitch_deg: f64) -> Camera {
    let yaw = Quat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), yaw_deg.to_radians());
    let pitch = Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), pitch_deg.to_radians());
    let q = yaw.mul(&pitch);
    let distance = 2.0 * extent_mm.max(1.0);
    Camera { position: q.rotate(Vec3::new(0.0, 0.0, distance)), rotation: q, projection: Projection::Orthographic { view_extent_mm: 1.2 * extent_mm.max(1.0) } }
}

/// Display settings for one raycast frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct View {
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub level: f64,
    pub width: f64,
    pub brightness: f64,
    /// Fraction of the z axis cut away from the front, in `[0, 1]`.
    pub clip: f64,
}

pub fn render_view(vol: &Arc<Volume3D>, view: View, width: usize, height: usize) -> Result<Vec<u8>, String> {
    let wl = WindowLevel::new(view.level, view.width).map_err(|e| e.to_string())?;
    if !(view.brightness.is_finite() && view.brightness >= 0.0) {
        return Err(format!("brightness {}", view.brightness));
    }
    let mut scene = SceneState::new(vol.clone(), wl);
    scene.transfer = build_transfer_function(wl, Palette::Grayscale, view.brightness);
    if view.clip > 0.0 {
        scene.clip = Some(ClipPlane::new(2, view.clip).map_err(|e| e.to_string())?);
    }
    let e = scene.extent_mm();
    let cam = orbit_camera(e.x.max(e.y).max(e.z), view.yaw_deg, view.pitch_deg);
    let frame = render_frame(&scene, &cam, width, height).map_err(|e| e.to_string())?;
    Ok(to_rgba(&frame))
}

fn to_rgba(frame: &RenderFrame) -> Vec<u8> {
    match frame.pixel_format {
        PixelFormat::Rgba8 => frame.pixels.clone(),
        PixelFormat::Rgb8 => frame.pixels.chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect(),
    }
}

fn gray_to_rgba(gray: &[u8]) -> Vec<u8> {
    gray.iter().flat_map(|&g| [g, g, g, 255]).collect()
}

/// Grey slice `z` of `vol` through the window, as RGBA.
pub fn window_slice(vol: &Volume3D, z: usize, level: f64, width: f64) -> Result<Vec<u8>, String> {
    let wl = WindowLevel::new(level, width).map_err(|e| e.to_string())?;
    let slice = vol.slice(z).map_err(|e| e.to_string())?;
    Ok(gray_to_rgba(&apply_window_level(&slice, wl).data))
}

/// Outcome of one refinement: scores plus the middle axial slice of each mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub dice_before: f64,
    pub dice_after: f64,
    pub argmax_slice: Vec<u8>,
    pub refined_slice: Vec<u8>,
    pub truth_slice: Vec<u8>,
}

fn mask_slice(mask: &LabelMask, z: usize) -> Vec<u8> {
    gray_to_rgba(&mask.slice(z).data.iter().map(|&l| if l != 0 { 230 } else { 20 }).collect::<Vec<_>>())
}

pub fn refine_sphere(ph: &NoisySphere, params: &CrfParams) -> Result<Refinement, String> {
    let out = mean_field_refine(&ph.prob, &ph.intensity, params).map_err(|e| e.to_string())?;
    let argmax = ph.prob.argmax();
    let z = ph.truth.dims().nz / 2;
    Ok(Refinement {
        dice_before: score_masks(&argmax, &ph.truth).map_err(|e| e.to_string())?.dice(),
        dice_after: score_masks(&out.labels, &ph.truth).map_err(|e| e.to_string())?.dice(),
        argmax_slice: mask_slice(&argmax, z),
        refined_slice: mask_slice(&out.labels, z),
        truth_slice: mask_slice(&ph.truth, z),
    })
}

/// Phantoms generated once and reused by every call.
#[wasm_bindgen]
pub struct Demo {
    abdomen: Arc<Volume3D>,
    sphere: NoisySphere,
}

#[wasm_bindgen]
impl Demo {
    /// `n`: edge of the abdomen phantom in voxels; the sphere phantom is fixed at 20.
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, seed: u64) -> Demo {
        Demo { abdomen: Arc::new(abdomen_phantom(n.clamp(8, 128), seed).0), sphere: noisy_sphere(20, 6.0, 0.7, 0.15, seed) }
    }

    pub fn depth(&self) -> usize {
        self.abdomen.dims().nz
    }

    pub fn side(&self) -> usize {
        self.abdomen.dims().nx
    }

    pub fn sphere_side(&self) -> usize {
        self.sphere.truth.dims().nx
    }

    #[allow(clippy::too_many_arguments)]
    pub fn render(
        &self,
        width: usize,
        height: usize,
        yaw_deg: f64,
        pitch_deg: f64,
        level: f64,
        window: f64,
        brightness: f64,
        clip: f64,
    ) -> Result<Vec<u8>, JsError> {
        let view = View { yaw_deg, pitch_deg, level, width: window, brightness, clip };
        render_view(&self.abdomen, view, width, height).map_err(|e| JsError::new(&e))
    }

    pub fn slice(&self, z: usize, level: f64, window: f64) -> Result<Vec<u8>, JsError> {
        window_slice(&self.abdomen, z, level, window).map_err(|e| JsError::new(&e))
    }

    /// Runs the CRF on the sphere phantom and returns [`RefineView`].
    pub fn refine(&self, w_pos: f64, w_bil: f64, iterations: usize) -> Result<RefineView, JsError> {
        let params = CrfParams { w_pos, sigma_pos: 1.5, w_bil, sigma_bil: 3.0, sigma_int: 0.1, iterations, ..CrfParams::default() };
        refine_sphere(&self.sphere, &params).map(|r| RefineView { inner: r }).map_err(|e| JsError::new(&e))
    }
}

#[wasm_bindgen]
pub struct RefineView {
    inner: Refinement,
}

#[wasm_bindgen]
impl RefineView {
    #[wasm_bindgen(getter)]
    pub fn dice_before(&self) -> f64 {
        self.inner.dice_before
    }

    #[wasm_bindgen(getter)]
    pub fn dice_after(&self) -> f64 {
        self.inner.dice_after
    }

    pub fn argmax_slice(&self) -> Vec<u8> {
        self.inner.argmax_slice.clone()
    }

    pub fn refined_slice(&self) -> Vec<u8> {
        self.inner.refined_slice.clone()
    }

    pub fn truth_slice(&self) -> Vec<u8> {
        self.inner.truth_slice.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view() -> View {
        View { yaw_deg: 0.0, pitch_deg: 0.0, level: 60.0, width: 400.0, brightness: 1.0, clip: 0.0 }
    }

    #[test]
    fn render_is_rgba_and_responds_to_orbit() {
        let vol = Arc::new(abdomen_phantom(24, 1).0);
        let front = render_view(&vol, view(), 32, 24).unwrap();
        assert_eq!(front.len(), 32 * 24 * 4);
        assert!(front.chunks_exact(4).all(|p| p[3] == 255));
        assert!(front.iter().any(|&b| b != 0 && b != 255));
        let side = render_view(&vol, View { yaw_deg: 90.0, ..view() }, 32, 24).unwrap();
        assert_ne!(front, side);
        let clipped = render_view(&vol, View { clip: 0.5, ..view() }, 32, 24).unwrap();
        assert_ne!(front, clipped);
        assert!(render_view(&vol, View { width: 0.0, ..view() }, 32, 24).is_err());
    }

    #[test]
    fn orbit_at_zero_matches_the_default_view() {
        let cam = orbit_camera(23.0, 0.0, 0.0);
        assert_eq!(cam, livervis_core::render::default_camera(23.0));
    }

    #[test]
    fn slice_window_maps_air_to_black() {
        let vol = abdomen_phantom(16, 1).0;
        let rgba = window_slice(&vol, 8, 60.0, 400.0).unwrap();
        assert_eq!(rgba.len(), 16 * 16 * 4);
        assert_eq!(&rgba[..4], &[0, 0, 0, 255]);
        assert!(window_slice(&vol, 16, 60.0, 400.0).is_err());
    }

    #[test]
    fn refinement_beats_argmax_on_the_demo_phantom() {
        let ph = noisy_sphere(20, 6.0, 0.7, 0.15, 7);
        let params = CrfParams { w_pos: 3.0, sigma_pos: 1.5, w_bil: 5.0, sigma_bil: 3.0, sigma_int: 0.1, ..CrfParams::default() };
        let r = refine_sphere(&ph, &params).unwrap();
        assert!(r.dice_after > r.dice_before);
        assert_eq!(r.refined_slice.len(), 20 * 20 * 4);
    }
}
