//! Seeded synthetic volumes with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::volume::{Dims, IntensityKind, LabelMask, ProbabilityVolume, Spacing, Volume3D};

/// Ball of `radius` voxels centred in a cube of edge `n`.
pub fn sphere_mask(n: usize, radius: f64) -> LabelMask {
    let c = (n as f64 - 1.0) / 2.0;
    LabelMask::from_fn(Dims::new(n, n, n), |x, y, z| {
        let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2);
        u8::from(d2 <= radius * radius)
    })
}

/// A soft prediction and matching intensity volume around a known sphere.
#[derive(Debug, Clone)]
pub struct NoisySphere {
    pub truth: LabelMask,
    pub prob: ProbabilityVolume,
    /// Normalized intensities: brighter inside the sphere plus Gaussian-ish noise.
    pub intensity: Volume3D,
}

/// Probability `confidence` on the true side of 0.5, with a `noise` fraction of
/// voxels flipped to the wrong side.
pub fn noisy_sphere(n: usize, radius: f64, confidence: f32, noise: f64, seed: u64) -> NoisySphere {
    let truth = sphere_mask(n, radius);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prob = Vec::with_capacity(truth.labels().len());
    let mut intensity = Vec::with_capacity(truth.labels().len());
    for &t in truth.labels() {
        let mut p = if t == 1 { confidence } else { 1.0 - confidence };
        if rng.gen_bool(noise) {
            p = 1.0 - p;
        }
        p = (p + rng.gen_range(-0.05f32..0.05)).clamp(0.0, 1.0);
        prob.push(p);
        // sum of three uniforms approximates a Gaussian with sd 0.05
        let jitter: f32 = (0..3).map(|_| rng.gen_range(-0.05f32..0.05)).sum::<f32>();
        let base = if t == 1 { 0.65 } else { 0.35 };
        intensity.push((base + jitter).clamp(0.0, 1.0));
    }
    let dims = truth.dims();
    NoisySphere {
        prob: ProbabilityVolume::new(dims, prob).expect("clamped to [0,1]"),
        intensity: Volume3D::new(dims, Spacing::UNIT, intensity, IntensityKind::Normalized01).expect("clamped to [0,1]"),
        truth,
    }
}

/// Voxels drawn from `levels` (random label per voxel) with integer noise in `[-noise, noise]`.
pub fn level_phantom(dims: Dims, levels: &[f32], noise: i32, seed: u64) -> (Volume3D, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(dims.len());
    let mut voxels = Vec::with_capacity(dims.len());
    for _ in 0..dims.len() {
        let l = rng.gen_range(0..levels.len());
        labels.push(l as u8);
        voxels.push(levels[l] + rng.gen_range(-noise..=noise) as f32);
    }
    (Volume3D::new(dims, Spacing::UNIT, voxels, IntensityKind::Hu).expect("dims match"), labels)
}

/// Abdominal-looking HU phantom: air outside a body ellipsoid, soft tissue,
/// a liver-like blob and a few darker lesions inside it.
pub fn abdomen_phantom(n: usize, seed: u64) -> (Volume3D, LabelMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(n, n, n);
    let f = n as f64;
    let mut voxels = Vec::with_capacity(dims.len());
    let mut liver = Vec::with_capacity(dims.len());
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let (u, v, w) = (x as f64 / f - 0.5, y as f64 / f - 0.5, z as f64 / f - 0.5);
                let body = (u / 0.45).powi(2) + (v / 0.35).powi(2) + (w / 0.45).powi(2) <= 1.0;
                let in_liver = ((u + 0.1) / 0.22).powi(2) + ((v - 0.02) / 0.16).powi(2) + (w / 0.25).powi(2) <= 1.0;
                let bone = ((u - 0.0).powi(2) + (v + 0.25).powi(2)).sqrt() < 0.05 && body;
                let lesion = in_liver && ((u + 0.15).powi(2) + v.powi(2) + (w - 0.05).powi(2)).sqrt() < 0.05;
                let base = if !body {
                    -1000.0
                } else if bone {
                    700.0
                } else if lesion {
                    20.0
                } else if in_liver {
                    110.0
                } else {
                    40.0
                };
                let noise = if body { rng.gen_range(-12.0..12.0f64) } else { 0.0 };
                voxels.push((base + noise).round() as f32);
                liver.push(u8::from(in_liver));
            }
        }
    }
    let vol = Volume3D::new(dims, Spacing::new(1.0, 1.0, 1.0), voxels, IntensityKind::Hu).expect("dims match");
    (vol, LabelMask::new(dims, liver).expect("dims match"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = noisy_sphere(8, 3.0, 0.7, 0.15, 9);
        let b = noisy_sphere(8, 3.0, 0.7, 0.15, 9);
        assert_eq!(a.prob, b.prob);
        assert_eq!(a.intensity, b.intensity);
        assert!(a.truth.count_nonzero() > 0);
    }

    #[test]
    fn level_phantom_stays_near_levels() {
        let (v, labels) = level_phantom(Dims::new(6, 6, 6), &[0.0, 100.0], 5, 1);
        for (x, l) in v.voxels().iter().zip(labels) {
            assert!((x - [0.0, 100.0][l as usize]).abs() <= 5.0);
        }
    }
}
