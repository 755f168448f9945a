//! Non-neural core of a 3-D aneurysm detection pipeline.
//!
//! The crate covers everything around a detection network that can be
//! computed exactly: NIfTI-1 volume I/O, intensity preprocessing, lesion
//! instance extraction from voxel masks, axis-aligned box geometry, anchor
//! generation and box regression coding, the training losses as numeric
//! oracles, FROC evaluation, and a synthetic phantom generator with a
//! classical threshold detector so the evaluation path runs end to end.
//!
//! Coordinates are 0-based voxel indices with x varying fastest. A voxel
//! `(i, j, k)` covers the box `[(i, j, k), (i + 1, j + 1, k + 1)]`.

pub mod anchors;
pub mod froc;
pub mod geometry;
pub mod interchange;
pub mod labels;
pub mod losses;
pub mod nifti_io;
pub mod phantom;
pub mod preprocess;

mod numeric;
mod volume;

pub use geometry::{giou, iou, nms, Box3, Detection};
pub use labels::{connected_components, Connectivity, LesionInstance};
pub use volume::{diagonal_affine, Affine, Volume3, VolumeError};
