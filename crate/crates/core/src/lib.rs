//! CT volume processing and rendering: NIfTI/raw I/O and intensity
//! preprocessing, class-balanced losses and overlap metrics, K-means and dense
//! CRF segmentation, organ ROI and lesion-detector stages, and a software
//! volume raycaster.

pub mod crf;
pub mod kmeans;
pub mod metrics;
pub mod phantom;
pub mod render;
pub mod roi;
pub mod volume;

pub use volume::{Dims, IntensityKind, LabelMask, ProbabilityVolume, ScalarType, Spacing, Volume3D};
