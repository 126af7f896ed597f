#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use livervis_core::Volume3D;
use livervis_service::orchestrator::watch::{DirSource, FileStat};

/// Single-file NIfTI-1, little-endian. `i16` for whole-number volumes, `f32` otherwise.
pub fn nifti_bytes(vol: &Volume3D) -> Vec<u8> {
    let d = vol.dims();
    let s = vol.spacing();
    let ints = vol.voxels().iter().all(|v| v.fract() == 0.0 && (-32768.0..=32767.0).contains(v));
    let (datatype, bitpix): (i16, i16) = if ints { (4, 16) } else { (16, 32) };
    let mut h = vec![0u8; 352];
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    for (i, v) in [3, d.nx as i16, d.ny as i16, d.nz as i16, 1, 1, 1, 1].iter().enumerate() {
        h[40 + 2 * i..42 + 2 * i].copy_from_slice(&v.to_le_bytes());
    }
    h[70..72].copy_from_slice(&datatype.to_le_bytes());
    h[72..74].copy_from_slice(&bitpix.to_le_bytes());
    for (i, v) in [1.0f32, s.sx as f32, s.sy as f32, s.sz as f32, 1.0, 1.0, 1.0, 1.0].iter().enumerate() {
        h[76 + 4 * i..80 + 4 * i].copy_from_slice(&v.to_le_bytes());
    }
    h[108..112].copy_from_slice(&352f32.to_le_bytes());
    h[344..348].copy_from_slice(b"n+1\0");
    for &v in vol.voxels() {
        if ints {
            h.extend_from_slice(&(v as i16).to_le_bytes());
        } else {
            h.extend_from_slice(&v.to_le_bytes());
        }
    }
    h
}

pub fn volumes(entries: Vec<(&str, Volume3D)>) -> Arc<HashMap<String, Arc<Volume3D>>> {
    Arc::new(entries.into_iter().map(|(k, v)| (k.to_string(), Arc::new(v))).collect())
}

/// In-memory input directory driven by the test.
#[derive(Default)]
pub struct ScriptedDir {
    files: Mutex<BTreeMap<String, (Vec<u8>, u64)>>,
    unreadable: Mutex<HashSet<String>>,
    clock: AtomicUsize,
}

impl ScriptedDir {
    pub fn put(&self, name: &str, bytes: Vec<u8>) {
        let t = self.clock.fetch_add(1, Ordering::SeqCst) as u64 + 1;
        self.files.lock().unwrap().insert(name.into(), (bytes, t));
    }

    pub fn remove(&self, name: &str) {
        self.files.lock().unwrap().remove(name);
    }

    pub fn deny(&self, name: &str) {
        self.unreadable.lock().unwrap().insert(name.into());
    }
}

impl DirSource for ScriptedDir {
    fn list(&self) -> io::Result<Vec<FileStat>> {
        Ok(self
            .files
            .lock()
            .unwrap()
            .iter()
            .filter(|(n, _)| n.ends_with(".nii"))
            .map(|(n, (b, t))| FileStat { name: n.clone(), size: b.len() as u64, mtime: *t })
            .collect())
    }

    fn read(&self, name: &str) -> io::Result<Vec<u8>> {
        if self.unreadable.lock().unwrap().contains(name) {
            return Err(io::Error::new(io::ErrorKind::PermissionDenied, "denied"));
        }
        self.files.lock().unwrap().get(name).map(|(b, _)| b.clone()).ok_or_else(|| io::ErrorKind::NotFound.into())
    }

    fn describe(&self, name: &str) -> String {
        format!("scripted:{name}")
    }
}

