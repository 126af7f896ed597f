//! Fully connected binary CRF over voxels with Gaussian smoothness and
//! appearance kernels, Potts compatibility, and mean-field inference.
//!
//! Pairwise weight between voxels `i` and `j`:
//!
//! ```text
//! w_pos * exp(-|p_i - p_j|^2 / 2 sigma_pos^2)
//!   + w_bil * exp(-|p_i - p_j|^2 / 2 sigma_bil^2 - |I_i - I_j|^2 / 2 sigma_int^2)
//! ```
//!
//! Inference sums messages over every neighbour within `truncation_radius`
//! standard deviations of each kernel. That is quadratic in the neighbourhood
//! size, so [`CrfParams::max_pairs`] bounds the work per iteration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Dims, LabelMask, ProbabilityVolume, Spacing, Volume3D};

pub const EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum CrfError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimsMismatch(Dims, Dims),
    #[error("{pairs} kernel evaluations per iteration exceed the budget of {budget}")]
    VolumeTooLarge { pairs: u64, budget: u64 },
    #[error("invalid CRF parameters: {0}")]
    InvalidParams(&'static str),
}

fn default_max_pairs() -> u64 {
    4_000_000_000
}

/// Kernel weights and ranges. Distances are in voxels unless `spacing_scaled` is set,
/// in which case they are millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    pub w_pos: f64,
    pub sigma_pos: f64,
    pub w_bil: f64,
    pub sigma_bil: f64,
    pub sigma_int: f64,
    pub iterations: usize,
    pub truncation_radius: f64,
    #[serde(default)]
    pub spacing_scaled: bool,
    #[serde(default = "default_max_pairs")]
    pub max_pairs: u64,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            w_pos: 3.0,
            sigma_pos: 3.0,
            w_bil: 10.0,
            sigma_bil: 30.0,
            sigma_int: 0.1,
            iterations: 5,
            truncation_radius: 3.0,
            spacing_scaled: false,
            max_pairs: default_max_pairs(),
        }
    }
}

impl CrfParams {
    /// Tighter spatial ranges for small structures such as lesions.
    pub fn lesion_preset(&self) -> Self {
        Self { sigma_pos: 0.5 * self.sigma_pos, sigma_bil: 0.5 * self.sigma_bil, ..*self }
    }

    pub fn validate(&self) -> Result<(), CrfError> {
        if !(self.w_pos >= 0.0 && self.w_bil >= 0.0) {
            return Err(CrfError::InvalidParams("kernel weights must be non-negative"));
        }
        if !(self.sigma_pos > 0.0 && self.sigma_bil > 0.0 && self.sigma_int > 0.0) {
            return Err(CrfError::InvalidParams("kernel widths must be positive"));
        }
        if self.iterations == 0 {
            return Err(CrfError::InvalidParams("at least one iteration is required"));
        }
        if !(self.truncation_radius > 0.0) {
            return Err(CrfError::InvalidParams("truncation radius must be positive"));
        }
        Ok(())
    }
}

/// Per-voxel label costs `[cost(0), cost(1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryField {
    dims: Dims,
    costs: Vec<[f64; 2]>,
}

impl UnaryField {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn costs(&self) -> &[[f64; 2]] {
        &self.costs
    }
}

/// Negative log-likelihood costs from a foreground probability map.
pub fn unary_from_probability(prob: &ProbabilityVolume) -> UnaryField {
    let costs = prob
        .values()
        .iter()
        .map(|&p| {
            let p = f64::from(p).clamp(EPS, 1.0 - EPS);
            [-(1.0 - p).ln(), -p.ln()]
        })
        .collect();
    UnaryField { dims: prob.dims(), costs }
}

/// Kernel sum between two voxels; positions in the same units as the sigmas.
pub fn pairwise_weight(pi: [f64; 3], pj: [f64; 3], ii: f64, ij: f64, params: &CrfParams) -> f64 {
    let d2: f64 = pi.iter().zip(&pj).map(|(a, b)| (a - b) * (a - b)).sum();
    let di = ii - ij;
    params.w_pos * (-d2 / (2.0 * params.sigma_pos * params.sigma_pos)).exp()
        + params.w_bil
            * (-d2 / (2.0 * params.sigma_bil * params.sigma_bil)
                - di * di / (2.0 * params.sigma_int * params.sigma_int))
                .exp()
}

fn position(dims: Dims, spacing: Spacing, scaled: bool, i: usize) -> [f64; 3] {
    let (x, y, z) = dims.coords(i);
    let p = [x as f64, y as f64, z as f64];
    if scaled {
        [p[0] * spacing.sx, p[1] * spacing.sy, p[2] * spacing.sz]
    } else {
        p
    }
}

/// Exact Gibbs energy of a binary labelling, summing the pairwise term over all `i < j`.
pub fn crf_energy(labels: &LabelMask, unaries: &UnaryField, vol: &Volume3D, params: &CrfParams) -> Result<f64, CrfError> {
    let dims = vol.dims();
    for other in [labels.dims(), unaries.dims()] {
        if other != dims {
            return Err(CrfError::DimsMismatch(dims, other));
        }
    }
    let l = labels.labels();
    let intensity = vol.voxels();
    let mut energy: f64 = l.iter().zip(&unaries.costs).map(|(&x, c)| c[usize::from(x != 0)]).sum();
    for i in 0..dims.len() {
        let pi = position(dims, vol.spacing(), params.spacing_scaled, i);
        for j in i + 1..dims.len() {
            // Potts: only disagreeing pairs pay
            if (l[i] != 0) != (l[j] != 0) {
                let pj = position(dims, vol.spacing(), params.spacing_scaled, j);
                energy += pairwise_weight(pi, pj, f64::from(intensity[i]), f64::from(intensity[j]), params);
            }
        }
    }
    Ok(energy)
}

#[derive(Debug, Clone, Copy)]
struct Offset {
    dx: isize,
    dy: isize,
    dz: isize,
    smooth: f64,
    bil: f64,
}

/// Neighbour offsets inside either kernel's truncation sphere, clipped to the volume extent.
fn neighbourhood(dims: Dims, spacing: Spacing, params: &CrfParams) -> Vec<Offset> {
    let scale = if params.spacing_scaled { spacing.as_array() } else { [1.0; 3] };
    let cut_pos = params.truncation_radius * params.sigma_pos;
    let cut_bil = params.truncation_radius * params.sigma_bil;
    let cut = cut_pos.max(cut_bil);
    let extent = dims.as_array();
    let r: Vec<isize> = (0..3)
        .map(|a| ((cut / scale[a]).floor() as isize).min(extent[a] as isize - 1).max(0))
        .collect();
    let mut out = Vec::new();
    for dz in -r[2]..=r[2] {
        for dy in -r[1]..=r[1] {
            for dx in -r[0]..=r[0] {
                if dx == 0 && dy == 0 && dz == 0 {
                    continue;
                }
                let d = [dx as f64 * scale[0], dy as f64 * scale[1], dz as f64 * scale[2]];
                let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                let smooth = if d2 <= cut_pos * cut_pos {
                    params.w_pos * (-d2 / (2.0 * params.sigma_pos * params.sigma_pos)).exp()
                } else {
                    0.0
                };
                let bil = if d2 <= cut_bil * cut_bil {
                    params.w_bil * (-d2 / (2.0 * params.sigma_bil * params.sigma_bil)).exp()
                } else {
                    0.0
                };
                if smooth > 0.0 || bil > 0.0 {
                    out.push(Offset { dx, dy, dz, smooth, bil });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct MeanFieldOutput {
    pub labels: LabelMask,
    /// Final foreground marginal `Q(1)`.
    pub marginals: ProbabilityVolume,
    /// Largest `|Q(0) + Q(1) - 1|` after each iteration.
    pub normalization_error: Vec<f64>,
}

#[inline]
fn softmax2(e0: f64, e1: f64) -> [f64; 2] {
    // Q(l) proportional to exp(-e_l)
    let m = e0.min(e1);
    let a = (-(e0 - m)).exp();
    let b = (-(e1 - m)).exp();
    let s = a + b;
    [a / s, b / s]
}

/// Mean-field refinement of a soft foreground prediction.
///
/// Returns the argmax labelling (ties go to background) and the final marginals.
pub fn mean_field_refine(prob: &ProbabilityVolume, vol: &Volume3D, params: &CrfParams) -> Result<MeanFieldOutput, CrfError> {
    params.validate()?;
    let dims = vol.dims();
    if prob.dims() != dims {
        return Err(CrfError::DimsMismatch(dims, prob.dims()));
    }
    let unary = unary_from_probability(prob);
    let offsets = if params.w_pos == 0.0 && params.w_bil == 0.0 {
        Vec::new()
    } else {
        neighbourhood(dims, vol.spacing(), params)
    };
    let pairs = dims.len() as u64 * offsets.len() as u64;
    if pairs > params.max_pairs {
        return Err(CrfError::VolumeTooLarge { pairs, budget: params.max_pairs });
    }

    let mut q: Vec<[f64; 2]> = unary.costs.iter().map(|c| softmax2(c[0], c[1])).collect();
    let mut normalization_error = Vec::with_capacity(params.iterations);
    if !offsets.is_empty() {
        let inv_int = 1.0 / (2.0 * params.sigma_int * params.sigma_int);
        let intensity = vol.voxels();
        for _ in 0..params.iterations {
            let update = |i: usize| -> [f64; 2] {
                let (x, y, z) = dims.coords(i);
                let ii = f64::from(intensity[i]);
                // msg[l] = sum_j k(i,j) * Q_j(other label)
                let mut msg = [0.0f64; 2];
                for o in &offsets {
                    let (nx, ny, nz) = (x as isize + o.dx, y as isize + o.dy, z as isize + o.dz);
                    if nx < 0
                        || ny < 0
                        || nz < 0
                        || nx >= dims.nx as isize
                        || ny >= dims.ny as isize
                        || nz >= dims.nz as isize
                    {
                        continue;
                    }
                    let j = dims.index(nx as usize, ny as usize, nz as usize);
                    let mut k = o.smooth;
                    if o.bil > 0.0 {
                        let di = ii - f64::from(intensity[j]);
                        k += o.bil * (-di * di * inv_int).exp();
                    }
                    msg[0] += k * q[j][1];
                    msg[1] += k * q[j][0];
                }
                let c = unary.costs[i];
                softmax2(c[0] + msg[0], c[1] + msg[1])
            };
            #[cfg(feature = "parallel")]
            let next: Vec<[f64; 2]> = {
                use rayon::prelude::*;
                (0..dims.len()).into_par_iter().map(update).collect()
            };
            #[cfg(not(feature = "parallel"))]
            let next: Vec<[f64; 2]> = (0..dims.len()).map(update).collect();
            q = next;
            normalization_error.push(q.iter().map(|p| (p[0] + p[1] - 1.0).abs()).fold(0.0, f64::max));
        }
    } else {
        normalization_error.push(q.iter().map(|p| (p[0] + p[1] - 1.0).abs()).fold(0.0, f64::max));
    }

    let labels = q.iter().map(|p| u8::from(p[1] > p[0])).collect();
    let marginals = q.iter().map(|p| p[1] as f32).collect();
    Ok(MeanFieldOutput {
        labels: LabelMask::new(dims, labels).expect("dims validated"),
        marginals: ProbabilityVolume::new(dims, marginals).expect("marginals lie in [0,1]"),
        normalization_error,
    })
}
