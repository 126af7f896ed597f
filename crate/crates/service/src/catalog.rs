//! Renderer catalog: u8 raw+sidecar volumes plus a JSON index, written by the
//! orchestrator and read by stream sessions on `load`.

use std::fs;
use std::path::{Path, PathBuf};

use livervis_core::volume::read_raw_sidecar;
use livervis_core::{Dims, Spacing, Volume3D};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unknown volume id {0:?}")]
    UnknownVolumeId(String),
    #[error("catalog index is not valid JSON: {0}")]
    CorruptIndex(serde_json::Error),
    #[error("duplicate volume id {0:?}")]
    DuplicateVolumeId(String),
    #[error(transparent)]
    Volume(#[from] livervis_core::volume::VolumeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub volume_id: String,
    pub dims: Dims,
    pub spacing: Spacing,
    /// RFC 3339, UTC.
    pub created_at: String,
}

/// Ids are plain file stems: no separators, no leading dot.
pub fn valid_volume_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 200
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[derive(Debug, Clone)]
pub struct Catalog {
    dir: PathBuf,
}

impl Catalog {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn index_path(&self) -> PathBuf {
        self.dir.join(INDEX_FILE)
    }

    pub fn raw_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.raw"))
    }

    pub fn sidecar_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    /// All entries; a missing index is an empty catalog.
    pub fn entries(&self) -> Result<Vec<CatalogEntry>, CatalogError> {
        match fs::read(self.index_path()) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(CatalogError::CorruptIndex),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn find(&self, id: &str) -> Result<CatalogEntry, CatalogError> {
        self.entries()?.into_iter().find(|e| e.volume_id == id).ok_or_else(|| CatalogError::UnknownVolumeId(id.to_string()))
    }

    /// Appends one entry. The index is rewritten through a temporary file and
    /// renamed into place, then parsed back.
    pub fn append(&self, entry: CatalogEntry) -> Result<(), CatalogError> {
        if !valid_volume_id(&entry.volume_id) {
            return Err(CatalogError::UnknownVolumeId(entry.volume_id));
        }
        fs::create_dir_all(&self.dir)?;
        let mut entries = self.entries()?;
        if entries.iter().any(|e| e.volume_id == entry.volume_id) {
            return Err(CatalogError::DuplicateVolumeId(entry.volume_id));
        }
        entries.push(entry);
        let tmp = self.dir.join(format!(".{INDEX_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&entries).expect("entries serialize"))?;
        fs::rename(&tmp, self.index_path())?;
        let back = self.entries()?;
        debug_assert_eq!(back.len(), entries.len());
        Ok(())
    }

    pub fn load_volume(&self, id: &str) -> Result<Volume3D, CatalogError> {
        if !valid_volume_id(id) {
            return Err(CatalogError::UnknownVolumeId(id.to_string()));
        }
        self.find(id)?;
        Ok(read_raw_sidecar(self.raw_path(id), self.sidecar_path(id))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_validation() {
        assert!(valid_volume_id("case-01_ab12.v2"));
        for bad in ["", "../x", "a/b", ".hidden", "a b"] {
            assert!(!valid_volume_id(bad), "{bad}");
        }
    }

    #[test]
    fn append_and_find() {
        let dir = tempfile::tempdir().unwrap();
        let cat = Catalog::new(dir.path());
        assert!(cat.entries().unwrap().is_empty());
        let e = CatalogEntry { volume_id: "a".into(), dims: Dims::new(1, 2, 3), spacing: Spacing::UNIT, created_at: "t".into() };
        cat.append(e.clone()).unwrap();
        assert!(matches!(cat.append(e.clone()), Err(CatalogError::DuplicateVolumeId(_))));
        assert_eq!(cat.find("a").unwrap(), e);
        assert!(matches!(cat.find("b"), Err(CatalogError::UnknownVolumeId(_))));
        assert!(matches!(cat.load_volume("../a"), Err(CatalogError::UnknownVolumeId(_))));
    }
}
