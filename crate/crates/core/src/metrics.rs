//! Pixel-wise losses, class-balancing weights and overlap scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Dims, Image2D, LabelMask};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no image in the set contains a positive sample")]
    NoPositiveImages,
    #[error("empty mask sequence")]
    EmptyMasks,
    #[error("masks differ in size: {0}x{1} vs {2}x{3}")]
    MaskSizeMismatch(usize, usize, usize, usize),
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimsMismatch(Dims, Dims),
    #[error("empty score sequence")]
    EmptySequence,
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// Binary cross entropy for one pixel. `truth` is treated as 0 or 1.
#[inline]
pub fn bce(truth: f64, pred: f64) -> f64 {
    let p = clamp_prob(pred);
    -truth * p.ln() - (1.0 - truth) * (1.0 - p).ln()
}

/// Class-weighted BCE: the positive term is scaled by `1 - w`, the negative term by `w`.
#[inline]
pub fn weighted_bce(truth: f64, pred: f64, w: f64) -> f64 {
    let p = clamp_prob(pred);
    -(1.0 - w) * truth * p.ln() - w * (1.0 - truth) * (1.0 - p).ln()
}

/// Normalized class weights; `w_plus + w_minus == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceWeights {
    pub w_plus: f64,
    pub w_minus: f64,
    pub raw_plus: f64,
    pub raw_minus: f64,
}

impl BalanceWeights {
    /// The scalar handed to [`weighted_bce`]. Bound to `w_plus` so that the
    /// positive term ends up weighted by `w_minus`.
    pub fn loss_weight(&self) -> f64 {
        self.w_plus
    }
}

/// Global balancing weights over a set of 2D truth masks (nonzero = positive).
///
/// The positive ratio only counts pixels of images that contain at least one
/// positive; the negative ratio counts every image.
pub fn balancing_weights(masks: &[Image2D<u8>]) -> Result<BalanceWeights, MetricsError> {
    let first = masks.first().ok_or(MetricsError::EmptyMasks)?;
    let (mut positives, mut negatives, mut positive_image_total, mut total) = (0u64, 0u64, 0u64, 0u64);
    for m in masks {
        if (m.width, m.height) != (first.width, first.height) {
            return Err(MetricsError::MaskSizeMismatch(first.width, first.height, m.width, m.height));
        }
        let pos = m.data.iter().filter(|&&v| v != 0).count() as u64;
        let n = m.data.len() as u64;
        positives += pos;
        negatives += n - pos;
        total += n;
        if pos > 0 {
            positive_image_total += n;
        }
    }
    if positive_image_total == 0 {
        return Err(MetricsError::NoPositiveImages);
    }
    let raw_plus = positives as f64 / positive_image_total as f64;
    let raw_minus = negatives as f64 / total as f64;
    let sum = raw_plus + raw_minus;
    Ok(BalanceWeights { w_plus: raw_plus / sum, w_minus: raw_minus / sum, raw_plus, raw_minus })
}

/// Voxelwise confusion counts with precision, recall and F1 (= Dice).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl SegmentationScore {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let pred = tp + fp;
        let truth = tp + fn_;
        // Empty prediction against empty truth is a perfect score.
        if pred == 0 && truth == 0 {
            return Self { precision: 1.0, recall: 1.0, f1: 1.0, tp, fp, fn_ };
        }
        let precision = if pred == 0 { 0.0 } else { tp as f64 / pred as f64 };
        let recall = if truth == 0 { 0.0 } else { tp as f64 / truth as f64 };
        let f1 = if tp == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1, tp, fp, fn_ }
    }

    pub fn dice(&self) -> f64 {
        self.f1
    }
}

fn score_labels(pred: &[u8], truth: &[u8]) -> SegmentationScore {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    SegmentationScore::from_counts(tp, fp, fn_)
}

pub fn score_masks(pred: &LabelMask, truth: &LabelMask) -> Result<SegmentationScore, MetricsError> {
    if pred.dims() != truth.dims() {
        return Err(MetricsError::DimsMismatch(pred.dims(), truth.dims()));
    }
    Ok(score_labels(pred.labels(), truth.labels()))
}

/// One score per axial slice.
pub fn score_slices(pred: &LabelMask, truth: &LabelMask) -> Result<Vec<SegmentationScore>, MetricsError> {
    if pred.dims() != truth.dims() {
        return Err(MetricsError::DimsMismatch(pred.dims(), truth.dims()));
    }
    let n = pred.dims().slice_len();
    Ok(pred.labels().chunks(n).zip(truth.labels().chunks(n)).map(|(p, t)| score_labels(p, t)).collect())
}

/// Mean of per-case Dice scores.
pub fn dice_per_case(scores: &[f64]) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
