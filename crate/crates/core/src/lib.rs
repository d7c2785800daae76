//! Multi-axis ensemble segmentation of 3D scans.
//!
//! A volume is windowed to `[0, 1]`, cut into 2D slices along the axial,
//! coronal and sagittal axes, and each slice is handed to a pluggable
//! [`segmenter::SliceSegmenter`]. The per-axis probability volumes are
//! averaged and the most probable class is taken per voxel. Around that core
//! sit DICOM/RVOL/PNG I/O, IoU/Dice evaluation, marching-cubes mesh export and
//! synthetic phantoms.

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod phantom;
pub mod segmenter;
pub mod slicer;
pub mod volume;

pub use error::{Error, ErrorKind, Result};
pub use slicer::Axis;
pub use volume::{ClassMap, Dims, LabelVolume, ProbVolume, ScalarVolume, Spacing};
