//! Stages that run after the organ mask is available: slice-range selection from
//! a Gaussian fit, bounding-box cropping, masking, and the sliding-window lesion
//! detector with its agreement filter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Dims, Image2D, LabelMask, ProbabilityVolume};

/// Edge of the detector's inner window in pixels.
pub const WINDOW: usize = 50;
/// Context added on every side of the inner window.
pub const CONTEXT_MARGIN: usize = 15;
pub const STRIDE: usize = 25;
/// A window is kept when at least a quarter of it overlaps the organ.
pub const MIN_OVERLAP: usize = WINDOW * WINDOW / 4;
/// Lesion pixels needed inside a window for a positive verdict.
pub const MIN_LESION_PIXELS: usize = 50;
pub const DEFAULT_K_SIGMA: f64 = 2.0;
pub const DEFAULT_CROP_MARGIN: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum RoiError {
    #[error("mask has no positive voxels")]
    EmptyMask,
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimsMismatch(Dims, Dims),
    #[error("slice {0}x{1} is smaller than the {WINDOW}x{WINDOW} detector window")]
    SliceTooSmall(usize, usize),
    #[error("box {0:?} does not fit in {1:?}")]
    BoxOutOfBounds(RoiBox, Dims),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceGaussianFit {
    pub mean: f64,
    pub variance: f64,
    pub total_positive: u64,
}

/// Positive voxel count per axial slice.
pub fn slice_counts(mask: &LabelMask) -> Vec<u64> {
    mask.labels()
        .chunks(mask.dims().slice_len())
        .map(|s| s.iter().filter(|&&l| l != 0).count() as u64)
        .collect()
}

/// Method-of-moments Gaussian over slice index weighted by positive count.
pub fn fit_slice_gaussian(mask: &LabelMask) -> Result<SliceGaussianFit, RoiError> {
    fit_counts(&slice_counts(mask))
}

pub fn fit_counts(counts: &[u64]) -> Result<SliceGaussianFit, RoiError> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(RoiError::EmptyMask);
    }
    let n = total as f64;
    let mean = counts.iter().enumerate().map(|(z, &c)| z as f64 * c as f64).sum::<f64>() / n;
    let variance = counts.iter().enumerate().map(|(z, &c)| (z as f64 - mean).powi(2) * c as f64).sum::<f64>() / n;
    Ok(SliceGaussianFit { mean, variance, total_positive: total })
}

/// Inclusive slice interval `mean ± k_sigma·σ`, rounded inward and clamped to the volume.
///
/// When inward rounding leaves no integer slice the slice nearest the mean is returned.
pub fn select_slice_range(fit: &SliceGaussianFit, k_sigma: f64, nz: usize) -> (usize, usize) {
    let last = nz.saturating_sub(1) as f64;
    let half = k_sigma * fit.variance.max(0.0).sqrt();
    let lo = (fit.mean - half).ceil().clamp(0.0, last);
    let hi = (fit.mean + half).floor().clamp(0.0, last);
    if lo > hi {
        let c = fit.mean.round().clamp(0.0, last) as usize;
        return (c, c);
    }
    (lo as usize, hi as usize)
}

/// Inclusive voxel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl RoiBox {
    pub fn dims(&self) -> Dims {
        Dims::new(self.max[0] - self.min[0] + 1, self.max[1] - self.min[1] + 1, self.max[2] - self.min[2] + 1)
    }

    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let p = [x, y, z];
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    fn fits(&self, dims: Dims) -> bool {
        let d = dims.as_array();
        (0..3).all(|a| self.min[a] <= self.max[a] && self.max[a] < d[a])
    }
}

/// Tight box around the positives, grown by `margin` and clamped to the volume.
pub fn bounding_box(mask: &LabelMask, margin: usize) -> Result<RoiBox, RoiError> {
    let dims = mask.dims();
    let mut min = [usize::MAX; 3];
    let mut max = [0usize; 3];
    let mut any = false;
    for (i, &l) in mask.labels().iter().enumerate() {
        if l != 0 {
            any = true;
            let (x, y, z) = dims.coords(i);
            for (a, v) in [x, y, z].into_iter().enumerate() {
                min[a] = min[a].min(v);
                max[a] = max[a].max(v);
            }
        }
    }
    if !any {
        return Err(RoiError::EmptyMask);
    }
    let d = dims.as_array();
    for a in 0..3 {
        min[a] = min[a].saturating_sub(margin);
        max[a] = (max[a] + margin).min(d[a] - 1);
    }
    Ok(RoiBox { min, max })
}

/// Copies the box out of an x-fastest voxel buffer.
pub fn crop<T: Copy>(data: &[T], dims: Dims, roi: &RoiBox) -> Result<Vec<T>, RoiError> {
    if !roi.fits(dims) {
        return Err(RoiError::BoxOutOfBounds(*roi, dims));
    }
    let mut out = Vec::with_capacity(roi.dims().len());
    for z in roi.min[2]..=roi.max[2] {
        for y in roi.min[1]..=roi.max[1] {
            let start = dims.index(roi.min[0], y, z);
            out.extend_from_slice(&data[start..=start + roi.max[0] - roi.min[0]]);
        }
    }
    Ok(out)
}

/// Places a cropped buffer back into a full-size buffer filled with `fill`.
pub fn embed<T: Copy>(cropped: &[T], roi: &RoiBox, dims: Dims, fill: T) -> Result<Vec<T>, RoiError> {
    if !roi.fits(dims) || cropped.len() != roi.dims().len() {
        return Err(RoiError::BoxOutOfBounds(*roi, dims));
    }
    let mut out = vec![fill; dims.len()];
    let w = roi.max[0] - roi.min[0] + 1;
    let mut rows = cropped.chunks(w);
    for z in roi.min[2]..=roi.max[2] {
        for y in roi.min[1]..=roi.max[1] {
            let start = dims.index(roi.min[0], y, z);
            out[start..start + w].copy_from_slice(rows.next().expect("row count matches box"));
        }
    }
    Ok(out)
}

/// Crops `data` (shaped like `liver`) around the liver's bounding box plus `margin`.
pub fn crop_roi<T: Copy>(data: &[T], liver: &LabelMask, margin: usize) -> Result<(Vec<T>, RoiBox), RoiError> {
    if data.len() != liver.dims().len() {
        return Err(RoiError::DimsMismatch(liver.dims(), Dims::new(data.len(), 1, 1)));
    }
    let roi = bounding_box(liver, margin)?;
    Ok((crop(data, liver.dims(), &roi)?, roi))
}

/// Zeroes lesion probability outside the liver.
pub fn mask_restrict(lesion: &ProbabilityVolume, liver: &LabelMask) -> Result<ProbabilityVolume, RoiError> {
    if lesion.dims() != liver.dims() {
        return Err(RoiError::DimsMismatch(lesion.dims(), liver.dims()));
    }
    let values = lesion.values().iter().zip(liver.labels()).map(|(&p, &l)| if l != 0 { p } else { 0.0 }).collect();
    Ok(ProbabilityVolume::new(lesion.dims(), values).expect("subset of a valid probability map"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Unset,
    Positive,
    Negative,
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.x0 <= x && x < self.x1 && self.y0 <= y && y < self.y1
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectorBox {
    pub slice: usize,
    pub inner: Rect,
    pub context: Rect,
    pub verdict: Verdict,
}

impl DetectorBox {
    /// Box with its inner window at `(x, y)`; the context window is clamped to the image.
    pub fn at(slice: usize, x: usize, y: usize, width: usize, height: usize) -> Self {
        let inner = Rect { x0: x, y0: y, x1: x + WINDOW, y1: y + WINDOW };
        let context = Rect {
            x0: x.saturating_sub(CONTEXT_MARGIN),
            y0: y.saturating_sub(CONTEXT_MARGIN),
            x1: (inner.x1 + CONTEXT_MARGIN).min(width),
            y1: (inner.y1 + CONTEXT_MARGIN).min(height),
        };
        Self { slice, inner, context, verdict: Verdict::Unset }
    }

    pub fn record(&self) -> BoxRecord {
        BoxRecord { slice: self.slice, x: self.inner.x0, y: self.inner.y0, verdict: self.verdict }
    }
}

/// Serialized form of a detector box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub slice: usize,
    pub x: usize,
    pub y: usize,
    pub verdict: Verdict,
}

/// Window origins along one axis: `0, STRIDE, 2·STRIDE, …` while the window fits.
pub fn window_origins(len: usize) -> impl Iterator<Item = usize> {
    (0..=len.saturating_sub(WINDOW)).step_by(STRIDE).take_while(move |&o| o + WINDOW <= len)
}

struct SummedArea {
    width: usize,
    table: Vec<u32>,
}

impl SummedArea {
    fn new(img: &Image2D<u8>) -> Self {
        let w = img.width + 1;
        let mut table = vec![0u32; w * (img.height + 1)];
        for y in 0..img.height {
            let mut row = 0u32;
            for x in 0..img.width {
                row += u32::from(img.get(x, y) != 0);
                table[(y + 1) * w + x + 1] = table[y * w + x + 1] + row;
            }
        }
        Self { width: w, table }
    }

    fn sum(&self, r: &Rect) -> usize {
        let w = self.width;
        let t = &self.table;
        (t[r.y1 * w + r.x1] + t[r.y0 * w + r.x0] - t[r.y0 * w + r.x1] - t[r.y1 * w + r.x0]) as usize
    }
}

/// Stride-aligned detector windows overlapping the liver on at least [`MIN_OVERLAP`] pixels,
/// in row-major order of their origins.
pub fn place_detector_boxes(liver_slice: &Image2D<u8>, slice: usize) -> Result<Vec<DetectorBox>, RoiError> {
    let (w, h) = (liver_slice.width, liver_slice.height);
    if w < WINDOW || h < WINDOW {
        return Err(RoiError::SliceTooSmall(w, h));
    }
    let sat = SummedArea::new(liver_slice);
    let mut out = Vec::new();
    for y in window_origins(h) {
        for x in window_origins(w) {
            let b = DetectorBox::at(slice, x, y, w, h);
            if sat.sum(&b.inner) >= MIN_OVERLAP {
                out.push(b);
            }
        }
    }
    Ok(out)
}

/// Decides a verdict for a placed box. Stands in for the learned patch classifier.
pub trait BoxClassifier {
    fn classify(&self, slice: &Image2D<u8>, b: &DetectorBox) -> Verdict;
}

/// Positive iff at least [`MIN_LESION_PIXELS`] reference lesion pixels fall in the inner window.
pub struct LesionCountClassifier {
    pub min_pixels: usize,
}

impl Default for LesionCountClassifier {
    fn default() -> Self {
        Self { min_pixels: MIN_LESION_PIXELS }
    }
}

impl BoxClassifier for LesionCountClassifier {
    fn classify(&self, lesion_slice: &Image2D<u8>, b: &DetectorBox) -> Verdict {
        let r = b.inner;
        let mut n = 0;
        for y in r.y0..r.y1 {
            n += (r.x0..r.x1).filter(|&x| lesion_slice.get(x, y) != 0).count();
        }
        if n >= self.min_pixels {
            Verdict::Positive
        } else {
            Verdict::Negative
        }
    }
}

impl<F: Fn(&Image2D<u8>, &DetectorBox) -> Verdict> BoxClassifier for F {
    fn classify(&self, slice: &Image2D<u8>, b: &DetectorBox) -> Verdict {
        self(slice, b)
    }
}

pub fn classify_box(b: &mut DetectorBox, slice: &Image2D<u8>, classifier: &dyn BoxClassifier) -> Verdict {
    b.verdict = classifier.classify(slice, b);
    b.verdict
}

/// Keeps a lesion voxel only when it lies in the inner window of a positive box on its slice.
pub fn agreement_filter(lesion: &LabelMask, boxes: &[DetectorBox]) -> LabelMask {
    let dims = lesion.dims();
    let mut keep = vec![false; dims.len()];
    for b in boxes.iter().filter(|b| b.verdict == Verdict::Positive && b.slice < dims.nz) {
        for y in b.inner.y0..b.inner.y1.min(dims.ny) {
            for x in b.inner.x0..b.inner.x1.min(dims.nx) {
                keep[dims.index(x, y, b.slice)] = true;
            }
        }
    }
    let labels = lesion.labels().iter().zip(&keep).map(|(&l, &k)| if k { l } else { 0 }).collect();
    LabelMask::new(dims, labels).expect("same dims as input")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_fit_examples() {
        let f = fit_counts(&[0, 1, 2, 1, 0]).unwrap();
        assert_eq!((f.mean, f.variance, f.total_positive), (2.0, 0.5, 4));
        let f = fit_counts(&[0, 0, 7, 0]).unwrap();
        assert_eq!((f.mean, f.variance), (2.0, 0.0));
        assert_eq!(fit_counts(&[0, 0]), Err(RoiError::EmptyMask));
    }

    #[test]
    fn slice_range_examples() {
        let f = SliceGaussianFit { mean: 2.0, variance: 0.5, total_positive: 4 };
        assert_eq!(select_slice_range(&f, 2.0, 5), (1, 3));
        let f = SliceGaussianFit { mean: 3.0, variance: 0.0, total_positive: 4 };
        assert_eq!(select_slice_range(&f, 2.0, 10), (3, 3));
        let f = SliceGaussianFit { mean: 4.0, variance: 1.0, total_positive: 4 };
        assert_eq!(select_slice_range(&f, 1e6, 10), (0, 9));
        // inward rounding would be empty: nearest slice instead
        let f = SliceGaussianFit { mean: 2.5, variance: 0.01, total_positive: 4 };
        assert_eq!(select_slice_range(&f, 2.0, 10), (3, 3));
    }

    #[test]
    fn crop_examples() {
        let dims = Dims::new(16, 16, 16);
        let single = LabelMask::from_fn(dims, |x, y, z| u8::from((x, y, z) == (5, 5, 5)));
        assert_eq!(bounding_box(&single, 0).unwrap(), RoiBox { min: [5; 3], max: [5; 3] });

        let full = LabelMask::from_fn(dims, |_, _, _| 1);
        assert_eq!(bounding_box(&full, 4).unwrap(), RoiBox { min: [0; 3], max: [15; 3] });

        let block = LabelMask::from_fn(dims, |x, y, z| {
            u8::from((2..=7).contains(&x) && (3..=8).contains(&y) && (4..=9).contains(&z))
        });
        assert_eq!(bounding_box(&block, 1).unwrap(), RoiBox { min: [1, 2, 3], max: [8, 9, 10] });

        assert_eq!(bounding_box(&LabelMask::zeros(dims), 1), Err(RoiError::EmptyMask));
    }

    #[test]
    fn crop_then_embed_restores_support() {
        let dims = Dims::new(9, 7, 5);
        let mask = LabelMask::from_fn(dims, |x, y, z| u8::from((x + 2 * y + z) % 5 == 0 && x > 2 && y < 5));
        let (c, roi) = crop_roi(mask.labels(), &mask, 1).unwrap();
        assert_eq!(c.len(), roi.dims().len());
        assert_eq!(embed(&c, &roi, dims, 0).unwrap(), mask.labels());
    }

    #[test]
    fn mask_restrict_examples() {
        let dims = Dims::new(4, 4, 1);
        let p = ProbabilityVolume::new(dims, (0..16).map(|i| i as f32 / 16.0).collect()).unwrap();
        assert_eq!(mask_restrict(&p, &LabelMask::from_fn(dims, |_, _, _| 1)).unwrap(), p);
        assert!(mask_restrict(&p, &LabelMask::zeros(dims)).unwrap().values().iter().all(|&v| v == 0.0));
        let checker = LabelMask::from_fn(dims, |x, y, _| u8::from((x + y) % 2 == 0));
        let r = mask_restrict(&p, &checker).unwrap();
        for (i, (&a, &l)) in r.values().iter().zip(checker.labels()).enumerate() {
            assert_eq!(a, if l == 1 { p.values()[i] } else { 0.0 });
        }
        assert!(matches!(mask_restrict(&p, &LabelMask::zeros(Dims::new(2, 2, 1))), Err(RoiError::DimsMismatch(..))));
    }

    #[test]
    fn box_geometry() {
        let b = DetectorBox::at(0, 0, 0, 512, 512);
        assert_eq!(b.context, Rect { x0: 0, y0: 0, x1: 65, y1: 65 });
        let b = DetectorBox::at(0, 100, 200, 512, 512);
        assert_eq!(b.context, Rect { x0: 85, y0: 185, x1: 165, y1: 265 });
        assert_eq!(b.context.area(), 80 * 80);
        let b = DetectorBox::at(0, 462, 462, 512, 512);
        assert_eq!((b.inner.x1, b.context.x1), (512, 512));
    }

    #[test]
    fn empty_and_small_slices() {
        assert!(place_detector_boxes(&Image2D::filled(512, 512, 0), 0).unwrap().is_empty());
        assert_eq!(place_detector_boxes(&Image2D::filled(49, 60, 1), 0), Err(RoiError::SliceTooSmall(49, 60)));
    }

    #[test]
    fn full_slice_grid() {
        let boxes = place_detector_boxes(&Image2D::filled(512, 512, 1), 3).unwrap();
        // origins 0, 25, ..., 450 per axis
        assert_eq!(boxes.len(), 19 * 19);
        assert!(boxes.iter().all(|b| b.slice == 3 && b.verdict == Verdict::Unset));
    }

    #[test]
    fn classifier_boundary() {
        let mut lesion = Image2D::filled(100, 100, 0u8);
        let mut b = DetectorBox::at(0, 0, 0, 100, 100);
        let c = LesionCountClassifier::default();
        assert_eq!(classify_box(&mut b, &lesion, &c), Verdict::Negative);
        for i in 0..49 {
            lesion.set(i % 50, i / 50, 1);
        }
        assert_eq!(classify_box(&mut b, &lesion, &c), Verdict::Negative);
        lesion.set(49, 0, 1);
        assert_eq!(classify_box(&mut b, &lesion, &c), Verdict::Positive);
        // pixels in the context margin only do not count
        let mut outside = Image2D::filled(100, 100, 0u8);
        for y in 0..60 {
            outside.set(55, y, 1);
        }
        assert_eq!(classify_box(&mut b, &outside, &c), Verdict::Negative);
    }

    #[test]
    fn agreement_examples() {
        let dims = Dims::new(100, 60, 1);
        let lesion = LabelMask::from_fn(dims, |x, y, _| u8::from((25..75).contains(&x) && (5..15).contains(&y)));
        assert_eq!(agreement_filter(&lesion, &[]).count_nonzero(), 0);

        let mut b = DetectorBox::at(0, 0, 0, 100, 60);
        b.verdict = Verdict::Positive;
        let out = agreement_filter(&lesion, &[b]);
        assert_eq!(out.count_nonzero(), lesion.count_nonzero() / 2);
        assert!(out.labels().iter().enumerate().all(|(i, &l)| l == 0 || dims.coords(i).0 < 50));

        let mut neg = DetectorBox::at(0, 50, 0, 100, 60);
        neg.verdict = Verdict::Negative;
        assert_eq!(agreement_filter(&lesion, &[b, neg]), out);

        let whole: Vec<_> = [(0, 0), (50, 0), (0, 10), (50, 10)]
            .iter()
            .map(|&(x, y)| DetectorBox { verdict: Verdict::Positive, ..DetectorBox::at(0, x, y, 100, 60) })
            .collect();
        assert_eq!(agreement_filter(&lesion, &whole), lesion);
    }
}
