//! Volume ingestion and export: DICOM series, RVOL interchange files and PNG
//! slice datasets.

pub mod dicom;
pub mod png;
pub mod rvol;

pub use dicom::{read_dicom_series, DicomSeries, DicomSliceMeta};
pub use png::{export_png_slices, import_png_image, import_png_mask};
pub use rvol::{read_labels, read_scalar, write_labels, write_scalar, RvolVolume};
