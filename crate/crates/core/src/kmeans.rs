//! Intensity-only K-means (Lloyd) clustering of voxels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{LabelMask, Volume3D};

/// Voxels per work unit. Partial sums are combined in chunk order so results
/// do not depend on the thread count.
const CHUNK: usize = 1 << 16;

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum KMeansError {
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("k = {k} exceeds the {distinct} distinct intensities")]
    KTooLarge { k: usize, distinct: usize },
    #[error("k = {0} exceeds the 255 labels a mask can hold")]
    TooManyClusters(usize),
    #[error("max_iter must be at least 1")]
    NoIterations,
    #[error("expected {expected} centroids, got {actual}")]
    CentroidCount { expected: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    /// Stop early once no centroid moves by more than this.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize) -> Self {
        Self { k, max_iter: DEFAULT_MAX_ITER, tol: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: LabelMask,
    /// Ascending; label `j` belongs to `centroids[j]`.
    pub centroids: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of times an empty cluster was re-seeded.
    pub reseeded: usize,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_history: Vec<f64>,
}

impl KMeansResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &l in self.labels.labels() {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

fn distinct_count(sorted: &[f32]) -> usize {
    if sorted.is_empty() {
        return 0;
    }
    1 + sorted.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Centroids at the intensity percentiles `100 (j + 0.5) / k`, linearly interpolated.
pub fn init_centroids(vol: &Volume3D, k: usize) -> Result<Vec<f64>, KMeansError> {
    if k < 2 {
        return Err(KMeansError::KTooSmall(k));
    }
    let mut sorted = vol.voxels().to_vec();
    sorted.sort_by(f32::total_cmp);
    let distinct = distinct_count(&sorted);
    if k > distinct {
        return Err(KMeansError::KTooLarge { k, distinct });
    }
    let last = (sorted.len() - 1) as f64;
    Ok((0..k)
        .map(|j| {
            let pos = (j as f64 + 0.5) / k as f64 * last;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let t = pos - lo as f64;
            f64::from(sorted[lo]) * (1.0 - t) + f64::from(sorted[hi]) * t
        })
        .collect())
}

#[inline]
fn nearest(centroids: &[f64], v: f64) -> (u8, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (j, &c) in centroids.iter().enumerate() {
        let d = (v - c) * (v - c);
        // strict comparison keeps the lower index on ties
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best as u8, best_d)
}

#[derive(Clone)]
struct ChunkStats {
    sums: Vec<f64>,
    counts: Vec<u64>,
    wcss: f64,
    changed: usize,
    farthest: (f64, f64),
}

fn assign_chunk(centroids: &[f64], voxels: &[f32], labels: &mut [u8]) -> ChunkStats {
    let k = centroids.len();
    let mut st = ChunkStats { sums: vec![0.0; k], counts: vec![0; k], wcss: 0.0, changed: 0, farthest: (-1.0, 0.0) };
    for (v, l) in voxels.iter().zip(labels.iter_mut()) {
        let v = f64::from(*v);
        let (j, d) = nearest(centroids, v);
        if *l != j {
            st.changed += 1;
            *l = j;
        }
        st.sums[j as usize] += v;
        st.counts[j as usize] += 1;
        st.wcss += d;
        if d > st.farthest.0 {
            st.farthest = (d, v);
        }
    }
    st
}

fn assign(centroids: &[f64], voxels: &[f32], labels: &mut [u8]) -> ChunkStats {
    #[cfg(feature = "parallel")]
    let parts: Vec<ChunkStats> = {
        use rayon::prelude::*;
        voxels
            .par_chunks(CHUNK)
            .zip(labels.par_chunks_mut(CHUNK))
            .map(|(v, l)| assign_chunk(centroids, v, l))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<ChunkStats> =
        voxels.chunks(CHUNK).zip(labels.chunks_mut(CHUNK)).map(|(v, l)| assign_chunk(centroids, v, l)).collect();

    let mut iter = parts.into_iter();
    let mut total = iter.next().expect("volume is nonempty");
    for p in iter {
        for j in 0..total.sums.len() {
            total.sums[j] += p.sums[j];
            total.counts[j] += p.counts[j];
        }
        total.wcss += p.wcss;
        total.changed += p.changed;
        if p.farthest.0 > total.farthest.0 {
            total.farthest = p.farthest;
        }
    }
    total
}

/// Clusters voxel intensities into `params.k` groups starting from percentile centroids.
pub fn kmeans_segment(vol: &Volume3D, params: KMeansParams) -> Result<KMeansResult, KMeansError> {
    let init = init_centroids(vol, params.k)?;
    kmeans_from_centroids(vol, init, params)
}

/// Lloyd iterations from caller-supplied centroids.
pub fn kmeans_from_centroids(
    vol: &Volume3D,
    mut centroids: Vec<f64>,
    params: KMeansParams,
) -> Result<KMeansResult, KMeansError> {
    if params.k < 2 {
        return Err(KMeansError::KTooSmall(params.k));
    }
    if params.k > u8::MAX as usize {
        return Err(KMeansError::TooManyClusters(params.k));
    }
    if params.max_iter == 0 {
        return Err(KMeansError::NoIterations);
    }
    if centroids.len() != params.k {
        return Err(KMeansError::CentroidCount { expected: params.k, actual: centroids.len() });
    }
    let voxels = vol.voxels();
    // u8::MAX never matches a real label, so the first pass counts every voxel as changed.
    let mut labels = vec![u8::MAX; voxels.len()];
    let mut wcss_history = Vec::new();
    let mut reseeded = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iter {
        iterations += 1;
        let st = assign(&centroids, voxels, &mut labels);
        wcss_history.push(st.wcss);
        if st.changed == 0 {
            converged = true;
            break;
        }
        let mut shift = 0.0f64;
        let mut farthest = st.farthest;
        for j in 0..centroids.len() {
            let next = if st.counts[j] > 0 {
                st.sums[j] / st.counts[j] as f64
            } else {
                // Re-seed an empty cluster at the voxel worst served by the current centroids.
                reseeded += 1;
                let v = farthest.1;
                farthest.0 = -1.0;
                v
            };
            shift = shift.max((next - centroids[j]).abs());
            centroids[j] = next;
        }
        if params.tol > 0.0 && shift <= params.tol {
            let st = assign(&centroids, voxels, &mut labels);
            wcss_history.push(st.wcss);
            converged = st.changed == 0;
            break;
        }
    }

    // Canonical labelling: ascending centroid order.
    let mut order: Vec<usize> = (0..centroids.len()).collect();
    order.sort_by(|&a, &b| centroids[a].total_cmp(&centroids[b]).then(a.cmp(&b)));
    let mut remap = vec![0u8; centroids.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new as u8;
    }
    let sorted: Vec<f64> = order.iter().map(|&j| centroids[j]).collect();
    for l in labels.iter_mut() {
        *l = remap[*l as usize];
    }

    Ok(KMeansResult {
        labels: LabelMask::new(vol.dims(), labels).expect("labels match volume dims"),
        centroids: sorted,
        iterations,
        converged,
        reseeded,
        wcss_history,
    })
}
