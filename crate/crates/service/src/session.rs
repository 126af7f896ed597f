//! Per-viewer render state: the scene, the camera, and how pose and control
//! messages mutate them.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use livervis_core::render::{
    build_transfer_function, default_camera, render_frame, Camera, ClipPlane, Palette, RenderError, RenderFrame, SceneState,
};
use livervis_core::volume::WindowLevel;
use livervis_core::{IntensityKind, Volume3D};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError};
use crate::protocol::{ControlOp, PoseUpdate, TransformAction};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("no volume loaded")]
    NoVolumeLoaded,
    #[error("unknown volume id {0:?}")]
    UnknownVolumeId(String),
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("catalog: {0}")]
    Catalog(CatalogError),
}

impl ControlError {
    /// Short reason string sent to the viewer.
    pub fn reason(&self) -> &'static str {
        match self {
            ControlError::NoVolumeLoaded => "no-volume-loaded",
            ControlError::UnknownVolumeId(_) => "unknown-volume-id",
            ControlError::InvalidArgs(_) => "invalid-args",
            ControlError::Catalog(_) => "catalog",
        }
    }
}

/// Resolves volume ids for `load`.
pub trait VolumeSource: Send + Sync {
    fn load(&self, id: &str) -> Result<Arc<Volume3D>, ControlError>;
}

/// Catalog-backed source that keeps loaded volumes shared between sessions.
pub struct CatalogVolumes {
    catalog: Catalog,
    cache: Mutex<HashMap<String, Arc<Volume3D>>>,
}

impl CatalogVolumes {
    pub fn new(catalog: Catalog) -> Self {
        Self { catalog, cache: Mutex::new(HashMap::new()) }
    }
}

impl VolumeSource for CatalogVolumes {
    fn load(&self, id: &str) -> Result<Arc<Volume3D>, ControlError> {
        if let Some(v) = self.cache.lock().unwrap().get(id) {
            return Ok(v.clone());
        }
        let vol = match self.catalog.load_volume(id) {
            Ok(v) => Arc::new(v),
            Err(CatalogError::UnknownVolumeId(id)) => return Err(ControlError::UnknownVolumeId(id)),
            Err(e) => return Err(ControlError::Catalog(e)),
        };
        self.cache.lock().unwrap().insert(id.to_string(), vol.clone());
        Ok(vol)
    }
}

impl VolumeSource for HashMap<String, Arc<Volume3D>> {
    fn load(&self, id: &str) -> Result<Arc<Volume3D>, ControlError> {
        self.get(id).cloned().ok_or_else(|| ControlError::UnknownVolumeId(id.to_string()))
    }
}

/// Display window used right after a load.
pub fn initial_window(kind: IntensityKind) -> WindowLevel {
    let (level, width) = match kind {
        IntensityKind::Uint8 => (127.5, 255.0),
        IntensityKind::Normalized01 => (0.5, 1.0),
        IntensityKind::Hu => (50.0, 400.0),
    };
    WindowLevel::new(level, width).expect("positive width")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseOutcome {
    Applied,
    /// Older than the pose already in effect.
    Stale,
    /// Zero or non-finite quaternion, or non-finite position.
    Malformed,
}

#[derive(Debug, Clone)]
pub struct SessionState {
    scene: Option<SceneState>,
    volume_id: Option<String>,
    camera: Camera,
    pose_timestamp_us: Option<u64>,
}

impl Default for SessionState {
    fn default() -> Self {
        Self::new()
    }
}

impl SessionState {
    pub fn new() -> Self {
        Self { scene: None, volume_id: None, camera: default_camera(100.0), pose_timestamp_us: None }
    }

    pub fn scene(&self) -> Option<&SceneState> {
        self.scene.as_ref()
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn volume_id(&self) -> Option<&str> {
        self.volume_id.as_deref()
    }

    /// Latest-wins: a pose older than the one in effect is dropped.
    pub fn apply_pose(&mut self, pose: &PoseUpdate) -> PoseOutcome {
        let finite = pose.position.to_array().iter().all(|c| c.is_finite());
        let Some(rotation) = pose.rotation.normalized().filter(|_| finite) else {
            return PoseOutcome::Malformed;
        };
        if self.pose_timestamp_us.is_some_and(|t| pose.timestamp_us < t) {
            return PoseOutcome::Stale;
        }
        self.pose_timestamp_us = Some(pose.timestamp_us);
        self.camera.position = pose.position;
        self.camera.rotation = rotation;
        PoseOutcome::Applied
    }

    pub fn apply_control(&mut self, op: &ControlOp, volumes: &dyn VolumeSource) -> Result<(), ControlError> {
        match op {
            ControlOp::Load { volume_id } => {
                let vol = volumes.load(volume_id)?;
                let window = initial_window(vol.intensity_kind());
                let scene = SceneState::new(vol, window);
                if self.pose_timestamp_us.is_none() {
                    let e = scene.extent_mm();
                    self.camera = default_camera(e.x.max(e.y).max(e.z));
                }
                self.scene = Some(scene);
                self.volume_id = Some(volume_id.clone());
                Ok(())
            }
            ControlOp::Unload => {
                self.scene = None;
                self.volume_id = None;
                Ok(())
            }
            ControlOp::Transform { action, args } => {
                let scene = self.scene.as_mut().ok_or(ControlError::NoVolumeLoaded)?;
                apply_transform(scene, *action, args)
            }
            ControlOp::Slice { axis, offset } => {
                let scene = self.scene.as_mut().ok_or(ControlError::NoVolumeLoaded)?;
                let clip = ClipPlane::new(axis.index(), *offset).map_err(|e| ControlError::InvalidArgs(e.to_string()))?;
                scene.clip = Some(clip);
                Ok(())
            }
            ControlOp::Window { level, width, brightness } => {
                let scene = self.scene.as_mut().ok_or(ControlError::NoVolumeLoaded)?;
                let wl = WindowLevel::new(*level, *width).map_err(|e| ControlError::InvalidArgs(e.to_string()))?;
                let b = brightness.unwrap_or(scene.transfer.brightness());
                if !(b.is_finite() && b >= 0.0) {
                    return Err(ControlError::InvalidArgs(format!("brightness {b}")));
                }
                scene.transfer = build_transfer_function(wl, Palette::Grayscale, b);
                Ok(())
            }
        }
    }

    /// `None` when nothing is loaded.
    pub fn render(&self, width: usize, height: usize) -> Option<Result<RenderFrame, RenderError>> {
        self.scene.as_ref().map(|s| render_frame(s, &self.camera, width, height))
    }
}

fn apply_transform(scene: &mut SceneState, action: TransformAction, args: &[f64]) -> Result<(), ControlError> {
    let bad = |what: &str| ControlError::InvalidArgs(format!("{what}: {args:?}"));
    if args.iter().any(|a| !a.is_finite()) {
        return Err(bad("non-finite argument"));
    }
    let mut t = scene.transform;
    match (action, args) {
        (TransformAction::Rotate, &[x, y, z, w]) => {
            let q = livervis_core::render::Quat { x, y, z, w }.normalized().ok_or_else(|| bad("zero quaternion"))?;
            t.rotation = q.mul(&t.rotation).normalized().ok_or_else(|| bad("degenerate rotation"))?;
        }
        (TransformAction::Translate, &[x, y, z]) => {
            t.translation = t.translation + livervis_core::render::Vec3::new(x, y, z);
        }
        (TransformAction::Scale, &[s]) => {
            if s <= 0.0 {
                return Err(bad("scale must be positive"));
            }
            t.scale *= s;
        }
        _ => return Err(bad("wrong argument count")),
    }
    t.validate().map_err(|e| ControlError::InvalidArgs(e.to_string()))?;
    scene.transform = t;
    Ok(())
}
