//! One segmentation job: parse, segment, crop, publish to the catalog.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use livervis_core::crf::{mean_field_refine, CrfParams};
use livervis_core::kmeans::{kmeans_segment, KMeansParams, KMeansResult};
use livervis_core::roi::crop_roi;
use livervis_core::volume::{clip_and_normalize, decode_raw, parse_nifti, write_raw_sidecar, VolumeSidecar, WindowLevel};
use livervis_core::{IntensityKind, LabelMask, ProbabilityVolume, ScalarType, Volume3D};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::watch::DirSource;
use super::{Segmenter, WatchConfig};
use crate::catalog::{valid_volume_id, Catalog, CatalogEntry, CatalogError};

#[derive(Debug, Error)]
pub enum JobError {
    #[error("cannot read {0}: {1}")]
    Read(String, std::io::Error),
    #[error("{0}")]
    Parse(livervis_core::volume::VolumeError),
    #[error("expected {0}")]
    MissingProbabilitySibling(String),
    #[error("{0}")]
    BadProbability(String),
    #[error("{0}")]
    Segment(String),
    #[error("{0}")]
    EmptyMask(String),
    #[error("{0}")]
    Artifact(String),
    #[error("{0}")]
    Catalog(CatalogError),
}

impl JobError {
    pub fn kind(&self) -> &'static str {
        match self {
            JobError::Read(..) => "Unreadable",
            JobError::Parse(_) => "Parse",
            JobError::MissingProbabilitySibling(_) => "MissingProbabilitySibling",
            JobError::BadProbability(_) => "BadProbability",
            JobError::Segment(_) => "Segment",
            JobError::EmptyMask(_) => "EmptyMask",
            JobError::Artifact(_) => "Artifact",
            JobError::Catalog(_) => "Catalog",
        }
    }

    /// `Kind: detail`, as stored in the job record.
    pub fn reason(&self) -> String {
        format!("{}: {}", self.kind(), self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobOutput {
    pub mask: PathBuf,
    pub roi_volume: PathBuf,
    pub entry: CatalogEntry,
    pub catalog_raw: PathBuf,
}

impl JobOutput {
    pub fn paths(&self) -> Vec<String> {
        [&self.mask, &self.roi_volume, &self.catalog_raw].iter().map(|p| p.display().to_string()).collect()
    }
}

/// File name without the `.nii` extension.
pub fn stem(name: &str) -> &str {
    name.strip_suffix(".nii").unwrap_or(name)
}

/// Intensities scaled to [0, 1]: the HU clip window for CT, min-max otherwise.
pub fn normalized(vol: &Volume3D, clip: [f64; 2]) -> Result<Volume3D, JobError> {
    let (lo, hi) = match vol.intensity_kind() {
        IntensityKind::Hu => (clip[0], clip[1]),
        _ => {
            let (lo, hi) = vol.min_max();
            (f64::from(lo), f64::from(hi).max(f64::from(lo) + 1.0))
        }
    };
    clip_and_normalize(vol, lo, hi).map_err(|e| JobError::Segment(e.to_string()))
}

/// The liver cluster: the most populated cluster that is neither the darkest
/// nor the brightest. Air and bone/contrast sit at the extremes.
pub fn liver_cluster(result: &KMeansResult) -> usize {
    let sizes = result.cluster_sizes();
    let k = sizes.len();
    (1..k.saturating_sub(1)).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap_or(0)
}

pub fn segment(vol: &Volume3D, name: &str, seg: &Segmenter, clip: [f64; 2], source: &dyn DirSource) -> Result<LabelMask, JobError> {
    let norm = normalized(vol, clip)?;
    match seg {
        Segmenter::Kmeans { k } => {
            let result = kmeans_segment(&norm, KMeansParams::new(*k)).map_err(|e| JobError::Segment(e.to_string()))?;
            let liver = liver_cluster(&result) as u8;
            Ok(LabelMask::from_fn(vol.dims(), |x, y, z| u8::from(result.labels.get(x, y, z) == liver)))
        }
        Segmenter::ImportProbThenCrf { params } => {
            let prob = load_probability_sibling(name, vol, source)?;
            refine(&prob, &norm, params)
        }
    }
}

fn refine(prob: &ProbabilityVolume, norm: &Volume3D, params: &CrfParams) -> Result<LabelMask, JobError> {
    mean_field_refine(prob, norm, params).map(|o| o.labels).map_err(|e| JobError::Segment(e.to_string()))
}

/// Reads `<stem>.prob.raw` with its `<stem>.prob.json` sidecar.
pub fn load_probability_sibling(name: &str, vol: &Volume3D, source: &dyn DirSource) -> Result<ProbabilityVolume, JobError> {
    let base = format!("{}.prob", stem(name));
    let (raw_name, json_name) = (format!("{base}.raw"), format!("{base}.json"));
    let missing = || JobError::MissingProbabilitySibling(format!("{raw_name} and {json_name}"));
    let raw = source.read(&raw_name).map_err(|_| missing())?;
    let json = source.read(&json_name).map_err(|_| missing())?;
    let sidecar: VolumeSidecar = serde_json::from_slice(&json).map_err(|e| JobError::BadProbability(e.to_string()))?;
    let pv = decode_raw(&raw, &sidecar).map_err(|e| JobError::BadProbability(e.to_string()))?;
    if pv.dims() != vol.dims() {
        return Err(JobError::BadProbability(format!("dims {:?} do not match scan {:?}", pv.dims(), vol.dims())));
    }
    ProbabilityVolume::from_volume(&pv).map_err(|e| JobError::BadProbability(e.to_string()))
}

/// Writes the binary mask and the cropped scan to `output_dir`.
pub fn write_artifacts(job_id: &str, name: &str, vol: &Volume3D, mask: &LabelMask, output_dir: &Path, margin: usize) -> Result<(PathBuf, PathBuf), JobError> {
    let art = |e: &dyn std::fmt::Display| JobError::Artifact(e.to_string());
    let (cropped, roi) = crop_roi(vol.voxels(), mask, margin).map_err(|e| JobError::EmptyMask(e.to_string()))?;
    let roi_vol = Volume3D::with_scalar(roi.dims(), vol.spacing(), cropped, vol.intensity_kind(), vol.scalar_type()).map_err(|e| art(&e))?;
    let mask_vol = mask.to_volume(vol.spacing()).map_err(|e| art(&e))?;
    fs::create_dir_all(output_dir).map_err(|e| art(&e))?;
    let prefix = format!("{}.{job_id}", stem(name));
    let mask_raw = output_dir.join(format!("{prefix}.mask.raw"));
    let roi_raw = output_dir.join(format!("{prefix}.roi.raw"));
    write_raw_sidecar(&mask_vol, &mask_raw, mask_raw.with_extension("json")).map_err(|e| art(&e))?;
    write_raw_sidecar(&roi_vol, &roi_raw, roi_raw.with_extension("json")).map_err(|e| art(&e))?;
    fs::write(output_dir.join(format!("{prefix}.roi.box.json")), serde_json::to_vec_pretty(&roi).expect("box serializes"))
        .map_err(|e| art(&e))?;
    Ok((mask_raw, roi_raw))
}

fn display_window(vol: &Volume3D, clip: [f64; 2]) -> WindowLevel {
    let (lo, hi) = match vol.intensity_kind() {
        IntensityKind::Hu => (clip[0], clip[1]),
        _ => {
            let (lo, hi) = vol.min_max();
            (f64::from(lo), f64::from(hi).max(f64::from(lo) + 1.0))
        }
    };
    WindowLevel::from_range(lo, hi).expect("hi > lo")
}

/// `<stem>-<first 12 hex of sha256(job id, converted bytes)>`, reduced to id-safe characters.
pub fn volume_id(name: &str, job_id: &str, bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(job_id.as_bytes());
    h.update([0]);
    h.update(bytes);
    let digest = hex::encode(h.finalize());
    let clean: String = stem(name)
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_') { c } else { '_' })
        .take(64)
        .collect();
    let id = format!("{clean}-{}", &digest[..12]);
    debug_assert!(valid_volume_id(&id));
    id
}

pub fn now_rfc3339() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .expect("utc timestamps format")
}

/// Publishes a u8 copy of `vol` (windowed to 0..255, zero outside `mask`)
/// under a fresh volume id and appends it to the catalog index.
pub fn convert_for_renderer(mask: &LabelMask, vol: &Volume3D, name: &str, job_id: &str, clip: [f64; 2], catalog: &Mutex<Catalog>) -> Result<(CatalogEntry, PathBuf), JobError> {
    let wl = display_window(vol, clip);
    let bytes: Vec<f32> = vol
        .voxels()
        .iter()
        .zip(mask.labels())
        .map(|(&v, &m)| if m == 0 { 0.0 } else { f32::from(wl.gray(f64::from(v))) })
        .collect();
    let out = Volume3D::with_scalar(vol.dims(), vol.spacing(), bytes, IntensityKind::Uint8, ScalarType::U8)
        .map_err(|e| JobError::Artifact(e.to_string()))?;
    let raw_bytes: Vec<u8> = out.voxels().iter().map(|&v| v as u8).collect();
    let id = volume_id(name, job_id, &raw_bytes);

    let catalog = catalog.lock().unwrap();
    fs::create_dir_all(catalog.dir()).map_err(|e| JobError::Catalog(e.into()))?;
    let raw_path = catalog.raw_path(&id);
    write_raw_sidecar(&out, &raw_path, catalog.sidecar_path(&id)).map_err(|e| JobError::Catalog(e.into()))?;
    let entry = CatalogEntry { volume_id: id, dims: vol.dims(), spacing: vol.spacing(), created_at: now_rfc3339() };
    catalog.append(entry.clone()).map_err(JobError::Catalog)?;
    Ok((entry, raw_path))
}

/// Runs the whole job for input file `name`.
pub fn run_job(name: &str, job_id: &str, cfg: &WatchConfig, source: &dyn DirSource, catalog: &Mutex<Catalog>) -> Result<JobOutput, JobError> {
    let bytes = source.read(name).map_err(|e| JobError::Read(source.describe(name), e))?;
    let vol = parse_nifti(&bytes).map_err(JobError::Parse)?;
    let mask = segment(&vol, name, &cfg.segmenter, cfg.clip, source)?;
    if mask.count_nonzero() == 0 {
        return Err(JobError::EmptyMask("segmentation selected no voxels".into()));
    }
    let (mask_path, roi_path) = write_artifacts(job_id, name, &vol, &mask, &cfg.output_dir, cfg.crop_margin)?;
    let (entry, catalog_raw) = convert_for_renderer(&mask, &vol, name, job_id, cfg.clip, catalog)?;
    Ok(JobOutput { mask: mask_path, roi_volume: roi_path, entry, catalog_raw })
}
