//! Axis geometry: pulling 2D slices out of volumes along the three anatomical
//! axes, putting them back, and sizing slices for the segmenter.
//!
//! In-plane conventions:
//!
//! | axis     | fixed | rows | cols |
//! |----------|-------|------|------|
//! | axial    | z     | y    | x    |
//! | coronal  | y     | z    | x    |
//! | sagittal | x     | z    | y    |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::png;
use crate::volume::{Dims, Domain, Grid2, LabelVolume, ProbMap, ProbVolume, ScalarVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Axial,
    Coronal,
    Sagittal,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Axial, Axis::Coronal, Axis::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Axial => "axial",
            Axis::Coronal => "coronal",
            Axis::Sagittal => "sagittal",
        }
    }

    pub fn ordinal(self) -> u64 {
        match self {
            Axis::Axial => 0,
            Axis::Coronal => 1,
            Axis::Sagittal => 2,
        }
    }

    /// (rows, cols) of a slice along this axis.
    pub fn plane_dims(self, d: Dims) -> (usize, usize) {
        match self {
            Axis::Axial => (d.ny, d.nx),
            Axis::Coronal => (d.nz, d.nx),
            Axis::Sagittal => (d.nz, d.ny),
        }
    }

    /// Maps (slice index, row, col) to voxel (x, y, z).
    #[inline]
    pub fn to_voxel(self, index: usize, row: usize, col: usize) -> (usize, usize, usize) {
        match self {
            Axis::Axial => (col, row, index),
            Axis::Coronal => (col, index, row),
            Axis::Sagittal => (index, col, row),
        }
    }

    /// Linear voxel offset of (row, col) in slice `index`, as
    /// `base + row * row_stride + col * col_stride`.
    fn strides(self, d: Dims, index: usize) -> (usize, usize, usize) {
        let (sx, sy, sz) = (1, d.nx, d.nx * d.ny);
        match self {
            Axis::Axial => (index * sz, sy, sx),
            Axis::Coronal => (index * sy, sz, sx),
            Axis::Sagittal => (index * sx, sz, sy),
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "axial" => Ok(Axis::Axial),
            "coronal" => Ok(Axis::Coronal),
            "sagittal" => Ok(Axis::Sagittal),
            other => Err(Error::Config(format!("unknown axis '{other}'"))),
        }
    }
}

/// Parses a comma-separated axis list, rejecting duplicates and empty lists.
pub fn parse_axes(s: &str) -> Result<Vec<Axis>> {
    let mut axes = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let axis: Axis = part.parse()?;
        if axes.contains(&axis) {
            return Err(Error::Config(format!("axis '{axis}' listed twice")));
        }
        axes.push(axis);
    }
    if axes.is_empty() {
        return Err(Error::Config("axis list is empty".to_string()));
    }
    Ok(axes)
}

/// Network-facing slice size constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceSizePolicy {
    pub max_dim: usize,
    pub multiple: usize,
    pub min_dim: usize,
}

impl Default for SliceSizePolicy {
    fn default() -> Self {
        SliceSizePolicy {
            max_dim: 256,
            multiple: 32,
            min_dim: 32,
        }
    }
}

impl SliceSizePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.multiple == 0 || self.max_dim == 0 || self.min_dim == 0 {
            return Err(Error::Config(format!("slice size policy has a zero field: {self:?}")));
        }
        Ok(())
    }
}

pub fn slice_count(dims: Dims, axis: Axis) -> usize {
    match axis {
        Axis::Axial => dims.nz,
        Axis::Coronal => dims.ny,
        Axis::Sagittal => dims.nx,
    }
}

fn check_index(dims: Dims, axis: Axis, index: usize) -> Result<()> {
    let limit = slice_count(dims, axis);
    if index >= limit {
        return Err(Error::IndexOutOfRange { index, limit });
    }
    Ok(())
}

fn extract_raw<T: Copy>(dims: Dims, data: &[T], axis: Axis, index: usize) -> Vec<T> {
    let (h, w) = axis.plane_dims(dims);
    let (base, rs, cs) = axis.strides(dims, index);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let row = base + r * rs;
        out.extend((0..w).map(|c| data[row + c * cs]));
    }
    out
}

fn insert_raw<T: Copy>(dims: Dims, data: &mut [T], axis: Axis, index: usize, slice: &[T]) {
    let (h, w) = axis.plane_dims(dims);
    let (base, rs, cs) = axis.strides(dims, index);
    for r in 0..h {
        let row = base + r * rs;
        for c in 0..w {
            data[row + c * cs] = slice[r * w + c];
        }
    }
}

fn check_plane<T: Copy>(dims: Dims, axis: Axis, grid: &Grid2<T>) -> Result<()> {
    let (h, w) = axis.plane_dims(dims);
    if grid.h() != h || grid.w() != w {
        return Err(Error::DimsMismatch(format!(
            "{axis} slice of {dims} is {h}x{w}, got {}x{}",
            grid.h(),
            grid.w()
        )));
    }
    Ok(())
}

/// Volumes that can be cut into slices along an axis.
pub trait Sliceable {
    type Slice;

    fn extract_slice(&self, axis: Axis, index: usize) -> Result<Self::Slice>;

    /// Exact inverse of [`Sliceable::extract_slice`].
    fn insert_slice(&mut self, axis: Axis, index: usize, slice: &Self::Slice) -> Result<()>;
}

impl Sliceable for ScalarVolume {
    type Slice = Grid2<f32>;

    fn extract_slice(&self, axis: Axis, index: usize) -> Result<Grid2<f32>> {
        check_index(self.dims(), axis, index)?;
        let (h, w) = axis.plane_dims(self.dims());
        Grid2::new(h, w, extract_raw(self.dims(), self.data(), axis, index))
    }

    fn insert_slice(&mut self, axis: Axis, index: usize, slice: &Grid2<f32>) -> Result<()> {
        check_index(self.dims(), axis, index)?;
        check_plane(self.dims(), axis, slice)?;
        let (lo, hi) = match self.domain() {
            Domain::Hounsfield => (crate::volume::HU_MIN, crate::volume::HU_MAX),
            Domain::Normalized => (0.0, 1.0),
        };
        if slice.data().iter().any(|v| !(*v >= lo && *v <= hi)) {
            return Err(Error::Domain(format!(
                "slice values outside [{lo}, {hi}] for {:?} volume",
                self.domain()
            )));
        }
        let dims = self.dims();
        insert_raw(dims, self.data_mut(), axis, index, slice.data());
        Ok(())
    }
}

impl Sliceable for LabelVolume {
    type Slice = Grid2<u8>;

    fn extract_slice(&self, axis: Axis, index: usize) -> Result<Grid2<u8>> {
        check_index(self.dims(), axis, index)?;
        let (h, w) = axis.plane_dims(self.dims());
        Grid2::new(h, w, extract_raw(self.dims(), self.labels(), axis, index))
    }

    fn insert_slice(&mut self, axis: Axis, index: usize, slice: &Grid2<u8>) -> Result<()> {
        check_index(self.dims(), axis, index)?;
        check_plane(self.dims(), axis, slice)?;
        let c = self.classes().count();
        if let Some(&bad) = slice.data().iter().find(|&&l| l as usize >= c) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                classes: c,
            });
        }
        let dims = self.dims();
        insert_raw(dims, self.labels_mut(), axis, index, slice.data());
        Ok(())
    }
}

impl Sliceable for ProbVolume {
    type Slice = ProbMap;

    fn extract_slice(&self, axis: Axis, index: usize) -> Result<ProbMap> {
        check_index(self.dims(), axis, index)?;
        let (h, w) = axis.plane_dims(self.dims());
        let c = self.classes().count();
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            data.extend(extract_raw(self.dims(), self.channel(ch), axis, index));
        }
        ProbMap::new(c, h, w, data)
    }

    /// Writes the map's channels into the slice. The caller is responsible for
    /// the map being a valid distribution; [`ProbVolume::check`] verifies the
    /// assembled volume.
    fn insert_slice(&mut self, axis: Axis, index: usize, slice: &ProbMap) -> Result<()> {
        let dims = self.dims();
        check_index(dims, axis, index)?;
        let (h, w) = axis.plane_dims(dims);
        let c = self.classes().count();
        if slice.h() != h || slice.w() != w || slice.channels() != c {
            return Err(Error::DimsMismatch(format!(
                "{axis} slice of {dims} is {c}x{h}x{w}, got {}x{}x{}",
                slice.channels(),
                slice.h(),
                slice.w()
            )));
        }
        let n = dims.len();
        let probs = self.probs_mut();
        for ch in 0..c {
            insert_raw(
                dims,
                &mut probs[ch * n..(ch + 1) * n],
                axis,
                index,
                slice.channel(ch),
            );
        }
        Ok(())
    }
}

/// Slice size handed to the segmenter: downscale (aspect preserved) so the
/// larger side is at most `max_dim`, round each side to the nearest multiple
/// (ties up), then clamp to `min_dim`.
pub fn target_size(h: usize, w: usize, policy: &SliceSizePolicy) -> (usize, usize) {
    let largest = h.max(w);
    let scale = |n: usize| -> f64 {
        if largest > policy.max_dim {
            (n as f64 * policy.max_dim as f64) / largest as f64
        } else {
            n as f64
        }
    };
    let m = policy.multiple as f64;
    let round = |v: f64| -> usize {
        let k = (v / m + 0.5).floor() as usize;
        (k * policy.multiple).max(policy.min_dim).max(policy.multiple)
    };
    (round(scale(h)), round(scale(w)))
}

/// One image/mask pair in a training-slice manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub axis: Axis,
    pub index: usize,
    pub image: String,
    pub mask: String,
    pub h: usize,
    pub w: usize,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Writes every slice along the requested axes as an image PNG plus mask PNG
/// at native in-plane size, and a JSON-lines manifest listing the pairs.
/// Resizing and augmentation are left to the consumer.
pub fn export_training_slices(
    v: &ScalarVolume,
    l: &LabelVolume,
    axes: &[Axis],
    policy: &SliceSizePolicy,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    policy.validate()?;
    if v.dims() != l.dims() {
        return Err(Error::DimsMismatch(format!(
            "volume {} vs labels {}",
            v.dims(),
            l.dims()
        )));
    }
    let mut entries = Vec::new();
    for &axis in axes {
        png::export_png_slices(v, Some(l), axis, out_dir)?;
        let (h, w) = axis.plane_dims(v.dims());
        for index in 0..slice_count(v.dims(), axis) {
            entries.push(ManifestEntry {
                axis,
                index,
                image: png::image_file_name(axis, index),
                mask: png::mask_file_name(axis, index),
                h,
                w,
            });
        }
    }
    let manifest_path: PathBuf = out_dir.join(MANIFEST_NAME);
    let file = File::create(&manifest_path)
        .map_err(|e| Error::io(format!("creating {}", manifest_path.display()), e))?;
    let mut out = BufWriter::new(file);
    for e in &entries {
        let line = serde_json::to_string(e).expect("manifest entries serialize");
        writeln!(out, "{line}").map_err(|e| Error::io("writing manifest", e))?;
    }
    out.flush().map_err(|e| Error::io("writing manifest", e))?;
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| Error::Config(format!("bad manifest line '{l}': {e}")))
        })
        .collect()
}
