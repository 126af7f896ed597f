//! CPU volume raycaster with front-to-back emission/absorption compositing.
//!
//! Coordinates come in three frames:
//!
//! * world: millimetres, where cameras live;
//! * scene-local: millimetres centred on the volume, before the scene transform;
//! * volume: millimetres with voxel `(0, 0, 0)` at the origin. [`cast_ray`] works here.

mod math;
mod transfer;

pub use math::{Quat, Vec3};
pub use transfer::{build_transfer_function, Palette, TransferFunction, TABLE_SIZE};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Volume3D, WindowLevel};

/// Rays stop once accumulated opacity reaches this.
pub const EARLY_EXIT_ALPHA: f64 = 0.99;
pub const DEFAULT_BLOCK_EDGE: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("rotation quaternion has zero or non-finite norm")]
    DegenerateRotation,
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("clip offset must lie in [0,1], got {0}")]
    InvalidClipOffset(f64),
    #[error("clip axis must be 0, 1 or 2, got {0}")]
    InvalidClipAxis(usize),
    #[error("projection parameter must be positive and finite, got {0}")]
    InvalidProjection(f64),
    #[error("block edge must be at least 2, got {0}")]
    InvalidBlockEdge(usize),
    #[error("frame size must be at least 1x1")]
    EmptyFrame,
}

/// Trilinear interpolation at a continuous voxel coordinate. Points outside
/// `[0, n-1]` on any axis read as 0.
pub fn sample_trilinear(vol: &Volume3D, p: Vec3) -> f64 {
    let d = vol.dims();
    let n = [d.nx, d.ny, d.nz];
    let c = p.to_array();
    let mut i0 = [0usize; 3];
    let mut i1 = [0usize; 3];
    let mut t = [0.0f64; 3];
    for a in 0..3 {
        let hi = (n[a] - 1) as f64;
        // tolerate rounding just outside the grid
        if !(c[a] >= -1e-9 && c[a] <= hi + 1e-9) {
            return 0.0;
        }
        let x = c[a].clamp(0.0, hi);
        let f = x.floor();
        i0[a] = f as usize;
        i1[a] = (i0[a] + 1).min(n[a] - 1);
        t[a] = x - f;
    }
    let v = vol.voxels();
    let at = |x: usize, y: usize, z: usize| f64::from(v[d.index(x, y, z)]);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c00 = lerp(at(i0[0], i0[1], i0[2]), at(i1[0], i0[1], i0[2]), t[0]);
    let c10 = lerp(at(i0[0], i1[1], i0[2]), at(i1[0], i1[1], i0[2]), t[0]);
    let c01 = lerp(at(i0[0], i0[1], i1[2]), at(i1[0], i0[1], i1[2]), t[0]);
    let c11 = lerp(at(i0[0], i1[1], i1[2]), at(i1[0], i1[1], i1[2]), t[0]);
    lerp(lerp(c00, c10, t[1]), lerp(c01, c11, t[1]), t[2])
}

/// Premultiplied colour and opacity accumulated front to back.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Composite {
    pub color: [f64; 3],
    pub alpha: f64,
}

impl Composite {
    /// Adds a sample behind everything accumulated so far.
    #[inline]
    pub fn push(&mut self, rgb: [f64; 3], a: f64) {
        let w = (1.0 - self.alpha) * a;
        for (c, s) in self.color.iter_mut().zip(rgb) {
            *c += w * s;
        }
        self.alpha += w;
    }

    /// `self` in front of `back`.
    pub fn over(&self, back: &Composite) -> Composite {
        let k = 1.0 - self.alpha;
        Composite {
            color: [
                self.color[0] + k * back.color[0],
                self.color[1] + k * back.color[1],
                self.color[2] + k * back.color[2],
            ],
            alpha: self.alpha + k * back.alpha,
        }
    }

    pub fn rgba(&self) -> [f64; 4] {
        [self.color[0], self.color[1], self.color[2], self.alpha]
    }
}

/// Per-block intensity bounds used to skip regions the transfer function renders invisible.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxBlockGrid {
    edge: usize,
    blocks: [usize; 3],
    /// `(min, max)` over the block's voxels plus a one-voxel apron on every side,
    /// which covers every trilinear sample whose cell starts in the block.
    ranges: Vec<(f32, f32)>,
}

impl MinMaxBlockGrid {
    pub fn edge(&self) -> usize {
        self.edge
    }

    pub fn block_counts(&self) -> [usize; 3] {
        self.blocks
    }

    pub fn ranges(&self) -> &[(f32, f32)] {
        &self.ranges
    }

    #[inline]
    fn block_index(&self, b: [usize; 3]) -> usize {
        b[0] + self.blocks[0] * (b[1] + self.blocks[1] * b[2])
    }

    pub fn range(&self, bx: usize, by: usize, bz: usize) -> (f32, f32) {
        self.ranges[self.block_index([bx, by, bz])]
    }

    /// Per-block flag: true where no sample can have nonzero opacity.
    pub fn empty_under(&self, tf: &TransferFunction) -> Vec<bool> {
        self.ranges.iter().map(|&(lo, hi)| tf.max_alpha(f64::from(lo), f64::from(hi)) == 0.0).collect()
    }
}

pub fn build_minmax_blocks(vol: &Volume3D, block_edge: usize) -> Result<MinMaxBlockGrid, RenderError> {
    if block_edge < 2 {
        return Err(RenderError::InvalidBlockEdge(block_edge));
    }
    let d = vol.dims();
    let n = [d.nx, d.ny, d.nz];
    let blocks = [n[0].div_ceil(block_edge), n[1].div_ceil(block_edge), n[2].div_ceil(block_edge)];
    let span = |b: usize, a: usize| (b * block_edge).saturating_sub(1)..=((b + 1) * block_edge + 1).min(n[a] - 1);
    let mut ranges = Vec::with_capacity(blocks.iter().product());
    let v = vol.voxels();
    for bz in 0..blocks[2] {
        for by in 0..blocks[1] {
            for bx in 0..blocks[0] {
                let mut lo = f32::INFINITY;
                let mut hi = f32::NEG_INFINITY;
                for z in span(bz, 2) {
                    for y in span(by, 1) {
                        for x in span(bx, 0) {
                            let s = v[d.index(x, y, z)];
                            lo = lo.min(s);
                            hi = hi.max(s);
                        }
                    }
                }
                ranges.push((lo, hi));
            }
        }
    }
    Ok(MinMaxBlockGrid { edge: block_edge, blocks, ranges })
}

/// Axis-aligned clip plane: samples with voxel coordinate below `offset · (n - 1)` are discarded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipPlane {
    pub axis: usize,
    pub offset: f64,
}

impl ClipPlane {
    pub fn new(axis: usize, offset: f64) -> Result<Self, RenderError> {
        if axis > 2 {
            return Err(RenderError::InvalidClipAxis(axis));
        }
        if !(0.0..=1.0).contains(&offset) {
            return Err(RenderError::InvalidClipOffset(offset));
        }
        Ok(Self { axis, offset })
    }
}

/// Options for a single ray.
#[derive(Debug, Clone, Copy)]
pub struct RayOptions<'a> {
    pub step_mm: f64,
    pub clip: Option<ClipPlane>,
    /// Skip blocks whose flag in `empty` is set.
    pub skip: Option<(&'a MinMaxBlockGrid, &'a [bool])>,
}

impl RayOptions<'_> {
    pub fn with_step(step_mm: f64) -> Self {
        Self { step_mm, clip: None, skip: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RayResult {
    pub rgba: [f64; 4],
    /// Samples actually evaluated.
    pub samples: u64,
}

/// Parametric entry and exit of a ray with an axis-aligned box, clipped to `t >= 0`.
fn intersect_box(origin: Vec3, dir: Vec3, lo: Vec3, hi: Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        let (o, d, l, h) = (origin.component(a), dir.component(a), lo.component(a), hi.component(a));
        if d.abs() < 1e-300 {
            if o < l || o > h {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((l - o) / d, (h - o) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Marches a ray through the volume and composites front to back.
///
/// `origin` and `direction` are in volume millimetres. Samples sit at
/// `t_entry + i · step_mm` up to the exit point.
pub fn cast_ray(vol: &Volume3D, tf: &TransferFunction, origin: Vec3, direction: Vec3, opts: &RayOptions) -> RayResult {
    let dir = direction.normalized();
    let sp = Vec3::from(vol.spacing().as_array());
    let d = vol.dims();
    let extent = Vec3::new((d.nx - 1) as f64, (d.ny - 1) as f64, (d.nz - 1) as f64);
    let Some((t_in, t_out)) = intersect_box(origin, dir, Vec3::ZERO, extent.mul_elem(sp)) else {
        return RayResult::default();
    };
    let step = opts.step_mm;
    let count = ((t_out - t_in) / step + 1e-9).floor() as u64 + 1;
    let clip_at = opts.clip.map(|c| (c.axis, c.offset * extent.component(c.axis)));

    let mut acc = Composite::default();
    let mut samples = 0u64;
    let mut i = 0u64;
    while i < count {
        let t = t_in + i as f64 * step;
        let p = (origin + dir * t).div_elem(sp);

        if let Some((grid, empty)) = opts.skip {
            let e = grid.edge as f64;
            let b = [
                ((p.x.max(0.0) / e) as usize).min(grid.blocks[0] - 1),
                ((p.y.max(0.0) / e) as usize).min(grid.blocks[1] - 1),
                ((p.z.max(0.0) / e) as usize).min(grid.blocks[2] - 1),
            ];
            if empty[grid.block_index(b)] {
                // Leave the block's box; the one-voxel apron absorbs rounding at its faces.
                let lo = Vec3::new(b[0] as f64 * e, b[1] as f64 * e, b[2] as f64 * e);
                let hi = lo + Vec3::new(e, e, e);
                let exit = intersect_box(p.mul_elem(sp), dir, lo.mul_elem(sp), hi.mul_elem(sp))
                    .map_or(0.0, |(_, t1)| t1);
                let skip_to = t + exit - 1e-9;
                let next = ((skip_to - t_in) / step).ceil().max(0.0) as u64;
                i = next.max(i + 1);
                continue;
            }
        }

        if let Some((axis, at)) = clip_at {
            if p.component(axis) < at {
                i += 1;
                continue;
            }
        }

        samples += 1;
        let s = tf.lookup(sample_trilinear(vol, p));
        let a = f64::from(s[3]);
        if a > 0.0 {
            acc.push([f64::from(s[0]), f64::from(s[1]), f64::from(s[2])], a);
            if acc.alpha >= EARLY_EXIT_ALPHA {
                break;
            }
        }
        i += 1;
    }
    RayResult { rgba: acc.rgba(), samples }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Projection {
    Orthographic { view_extent_mm: f64 },
    Perspective { fov_deg: f64 },
}

/// Camera looking down its local `-Z` axis with `+Y` up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub rotation: Quat,
    pub projection: Projection,
}

impl Camera {
    pub fn new(position: Vec3, rotation: Quat, projection: Projection) -> Result<Self, RenderError> {
        let rotation = rotation.normalized().ok_or(RenderError::DegenerateRotation)?;
        let p = match projection {
            Projection::Orthographic { view_extent_mm } => view_extent_mm,
            Projection::Perspective { fov_deg } => {
                if fov_deg >= 180.0 {
                    return Err(RenderError::InvalidProjection(fov_deg));
                }
                fov_deg
            }
        };
        if !(p.is_finite() && p > 0.0) {
            return Err(RenderError::InvalidProjection(p));
        }
        Ok(Self { position, rotation, projection })
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.rotate(Vec3::new(0.0, 0.0, -1.0))
    }

    /// World-space ray through the centre of pixel `(px, py)`.
    pub fn ray(&self, px: usize, py: usize, width: usize, height: usize) -> (Vec3, Vec3) {
        let u = (px as f64 + 0.5) / width as f64 - 0.5;
        let v = 0.5 - (py as f64 + 0.5) / height as f64;
        let aspect = height as f64 / width as f64;
        match self.projection {
            Projection::Orthographic { view_extent_mm } => {
                let offset = Vec3::new(u * view_extent_mm, v * view_extent_mm * aspect, 0.0);
                (self.position + self.rotation.rotate(offset), self.forward())
            }
            Projection::Perspective { fov_deg } => {
                let half = (0.5 * fov_deg.to_radians()).tan();
                let local = Vec3::new(2.0 * u * half, 2.0 * v * half * aspect, -1.0);
                (self.position, self.rotation.rotate(local).normalized())
            }
        }
    }
}

/// Placement of the volume in the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub translation: Vec3,
    pub rotation: Quat,
    pub scale: f64,
}

impl Default for Transform {
    fn default() -> Self {
        Self { translation: Vec3::ZERO, rotation: Quat::IDENTITY, scale: 1.0 }
    }
}

impl Transform {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(RenderError::InvalidScale(self.scale));
        }
        if (self.rotation.norm() - 1.0).abs() > 1e-6 {
            return Err(RenderError::DegenerateRotation);
        }
        Ok(())
    }

    fn inverse_point(&self, p: Vec3) -> Vec3 {
        self.rotation.conjugate().rotate(p - self.translation) * (1.0 / self.scale)
    }

    fn inverse_dir(&self, d: Vec3) -> Vec3 {
        self.rotation.conjugate().rotate(d) * (1.0 / self.scale)
    }
}

/// Everything a frame depends on besides the camera.
#[derive(Debug, Clone)]
pub struct SceneState {
    pub volume: Arc<Volume3D>,
    pub transform: Transform,
    pub clip: Option<ClipPlane>,
    pub transfer: TransferFunction,
    pub step_mm: f64,
    /// Empty-space skipping grid; rendering is identical with or without it.
    pub blocks: Option<Arc<MinMaxBlockGrid>>,
}

impl SceneState {
    /// Scene with identity transform, default step and a skipping grid.
    pub fn new(volume: Arc<Volume3D>, window: WindowLevel) -> Self {
        let step_mm = 0.5 * volume.spacing().min();
        let blocks = build_minmax_blocks(&volume, DEFAULT_BLOCK_EDGE).ok().map(Arc::new);
        Self {
            volume,
            transform: Transform::default(),
            clip: None,
            transfer: build_transfer_function(window, Palette::Grayscale, 1.0),
            step_mm,
            blocks,
        }
    }

    /// Volume extent in scene-local millimetres.
    pub fn extent_mm(&self) -> Vec3 {
        let d = self.volume.dims();
        let s = self.volume.spacing();
        Vec3::new((d.nx - 1) as f64 * s.sx, (d.ny - 1) as f64 * s.sy, (d.nz - 1) as f64 * s.sz)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        self.transform.validate()?;
        if let Some(c) = self.clip {
            ClipPlane::new(c.axis, c.offset)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PixelFormat {
    Rgb8,
    Rgba8,
}

impl PixelFormat {
    pub fn bytes_per_pixel(self) -> usize {
        match self {
            PixelFormat::Rgb8 => 3,
            PixelFormat::Rgba8 => 4,
        }
    }
}

/// A rendered image ready for streaming.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderFrame {
    pub width: u16,
    pub height: u16,
    pub pixel_format: PixelFormat,
    pub frame_id: u32,
    pub timestamp_us: u64,
    pub pixels: Vec<u8>,
}

impl RenderFrame {
    pub fn is_consistent(&self) -> bool {
        self.pixels.len() == self.width as usize * self.height as usize * self.pixel_format.bytes_per_pixel()
    }

    /// FNV-1a over the pixel bytes.
    pub fn checksum(&self) -> u64 {
        self.pixels.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderStats {
    pub samples: u64,
}

#[inline]
fn to_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn render_row(scene: &SceneState, cam: &Camera, width: usize, height: usize, y: usize, opts: &RayOptions, row: &mut [u8]) -> u64 {
    let half = scene.extent_mm() * 0.5;
    let mut samples = 0;
    for x in 0..width {
        let (o, d) = cam.ray(x, y, width, height);
        // world -> scene-local -> volume millimetres
        let o = scene.transform.inverse_point(o) + half;
        let d = scene.transform.inverse_dir(d);
        let r = cast_ray(&scene.volume, &scene.transfer, o, d, opts);
        samples += r.samples;
        // opaque black background: premultiplied colour is the final colour
        for c in 0..3 {
            row[3 * x + c] = to_byte(r.rgba[c]);
        }
    }
    samples
}

/// Renders an RGB8 frame. The result depends only on the arguments; `frame_id`
/// and `timestamp_us` are left at zero for the caller to stamp.
pub fn render_frame(scene: &SceneState, cam: &Camera, width: usize, height: usize) -> Result<RenderFrame, RenderError> {
    render_frame_with_stats(scene, cam, width, height, true).map(|(f, _)| f)
}

pub fn render_frame_with_stats(
    scene: &SceneState,
    cam: &Camera,
    width: usize,
    height: usize,
    skip_empty: bool,
) -> Result<(RenderFrame, RenderStats), RenderError> {
    if width == 0 || height == 0 {
        return Err(RenderError::EmptyFrame);
    }
    let (w16, h16) = (u16::try_from(width), u16::try_from(height));
    let (Ok(w16), Ok(h16)) = (w16, h16) else {
        return Err(RenderError::EmptyFrame);
    };
    scene.validate()?;
    let mut pixels = vec![0u8; width * height * 3];
    let empty = scene.blocks.as_ref().filter(|_| skip_empty).map(|g| (g.as_ref(), g.empty_under(&scene.transfer)));
    let opts = RayOptions {
        step_mm: scene.step_mm,
        clip: scene.clip,
        skip: empty.as_ref().map(|(g, e)| (*g, e.as_slice())),
    };

    #[cfg(feature = "parallel")]
    let samples: u64 = {
        use rayon::prelude::*;
        pixels
            .par_chunks_mut(width * 3)
            .enumerate()
            .map(|(y, row)| render_row(scene, cam, width, height, y, &opts, row))
            .sum()
    };
    #[cfg(not(feature = "parallel"))]
    let samples: u64 = pixels
        .chunks_mut(width * 3)
        .enumerate()
        .map(|(y, row)| render_row(scene, cam, width, height, y, &opts, row))
        .sum();

    let frame = RenderFrame { width: w16, height: h16, pixel_format: PixelFormat::Rgb8, frame_id: 0, timestamp_us: 0, pixels };
    Ok((frame, RenderStats { samples }))
}

/// Binary PPM (P6) encoding of an RGB8 frame.
pub fn encode_ppm(frame: &RenderFrame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    match frame.pixel_format {
        PixelFormat::Rgb8 => out.extend_from_slice(&frame.pixels),
        PixelFormat::Rgba8 => {
            for px in frame.pixels.chunks_exact(4) {
                out.extend_from_slice(&px[..3]);
            }
        }
    }
    out
}

/// Orthographic camera on the `+Z` side of the origin looking at it, framing `extent_mm`.
pub fn default_camera(extent_mm: f64) -> Camera {
    Camera {
        position: Vec3::new(0.0, 0.0, 2.0 * extent_mm.max(1.0)),
        rotation: Quat::IDENTITY,
        projection: Projection::Orthographic { view_extent_mm: 1.2 * extent_mm.max(1.0) },
    }
}
