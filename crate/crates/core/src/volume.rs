//! Volume types and the windowing, resampling and labeling math shared by
//! every other module.
//!
//! All volumes store voxels x-fastest: `index = x + nx * (y + ny * z)`.
//! Probability volumes are channel-major: channel `c` occupies
//! `probs[c * nvox .. (c + 1) * nvox]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowest Hounsfield value accepted in a scan (air after the usual rescale).
pub const HU_MIN: f32 = -1024.0;
/// Highest Hounsfield value accepted in a scan.
pub const HU_MAX: f32 = 32767.0;

/// Default soft-tissue window, in HU.
pub const DEFAULT_WINDOW: (f32, f32) = (-200.0, 500.0);

/// Per-voxel channel sums must be within this distance of 1.
pub const PROB_SUM_TOLERANCE: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub fn cube(n: usize) -> Self {
        Dims::new(n, n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidSize(format!("zero dimension in {self}")));
        }
        Ok(())
    }
}

impl From<[usize; 3]> for Dims {
    fn from(d: [usize; 3]) -> Self {
        Dims::new(d[0], d[1], d[2])
    }
}

impl From<Dims> for [usize; 3] {
    fn from(d: Dims) -> Self {
        d.as_array()
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Millimeters per voxel along x (column), y (row) and z (slice).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Spacing {
    sx: f64,
    sy: f64,
    sz: f64,
}

impl Spacing {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        for (name, v) in [("sx", sx), ("sy", sy), ("sz", sz)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSpacing(format!(
                    "{name} = {v} must be positive and finite"
                )));
            }
        }
        Ok(Spacing { sx, sy, sz })
    }

    pub fn unit() -> Self {
        Spacing {
            sx: 1.0,
            sy: 1.0,
            sz: 1.0,
        }
    }

    pub fn sx(&self) -> f64 {
        self.sx
    }

    pub fn sy(&self) -> f64 {
        self.sy
    }

    pub fn sz(&self) -> f64 {
        self.sz
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }
}

impl TryFrom<[f64; 3]> for Spacing {
    type Error = Error;

    fn try_from(s: [f64; 3]) -> Result<Self> {
        Spacing::new(s[0], s[1], s[2])
    }
}

impl From<Spacing> for [f64; 3] {
    fn from(s: Spacing) -> Self {
        s.as_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Hounsfield,
    Normalized,
}

/// A 3D grid of intensities with physical voxel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    dims: Dims,
    spacing: Spacing,
    domain: Domain,
    data: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(dims: Dims, spacing: Spacing, domain: Domain, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::DimsMismatch(format!(
                "{} voxels supplied for {dims}",
                data.len()
            )));
        }
        let (lo, hi) = match domain {
            Domain::Hounsfield => (HU_MIN, HU_MAX),
            Domain::Normalized => (0.0, 1.0),
        };
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= lo && **v <= hi))
        {
            return Err(Error::Domain(format!(
                "voxel {i} = {v} outside [{lo}, {hi}] for {domain:?} volume"
            )));
        }
        Ok(ScalarVolume {
            dims,
            spacing,
            domain,
            data,
        })
    }

    pub fn from_fn(
        dims: Dims,
        spacing: Spacing,
        domain: Domain,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        ScalarVolume::new(dims, spacing, domain, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Ordered class names plus the index that stands for background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ClassMapRepr", into = "ClassMapRepr")]
pub struct ClassMap {
    names: Vec<String>,
    background: usize,
}

#[derive(Serialize, Deserialize)]
struct ClassMapRepr {
    names: Vec<String>,
    background_index: usize,
}

impl TryFrom<ClassMapRepr> for ClassMap {
    type Error = Error;

    fn try_from(r: ClassMapRepr) -> Result<Self> {
        ClassMap::new(r.names, r.background_index)
    }
}

impl From<ClassMap> for ClassMapRepr {
    fn from(c: ClassMap) -> Self {
        ClassMapRepr {
            names: c.names,
            background_index: c.background,
        }
    }
}

impl ClassMap {
    pub fn new(names: Vec<String>, background: usize) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::InvalidClassMap(format!(
                "need at least 2 classes, got {}",
                names.len()
            )));
        }
        if names.len() > u8::MAX as usize + 1 {
            return Err(Error::InvalidClassMap(format!(
                "at most 256 classes supported, got {}",
                names.len()
            )));
        }
        if background >= names.len() {
            return Err(Error::InvalidClassMap(format!(
                "background index {background} >= class count {}",
                names.len()
            )));
        }
        Ok(ClassMap { names, background })
    }

    /// Four cardiac chambers followed by background.
    pub fn cardiac() -> Self {
        ClassMap {
            names: [
                "right_atrium",
                "right_ventricle",
                "left_atrium",
                "left_ventricle",
                "background",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            background: 4,
        }
    }

    pub fn count(&self) -> usize {
        self.names.len()
    }

    pub fn background(&self) -> usize {
        self.background
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    /// Class indices except background, in order.
    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.count()).filter(move |&c| c != self.background)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl Default for ClassMap {
    fn default() -> Self {
        ClassMap::cardiac()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: Dims,
    spacing: Spacing,
    classes: ClassMap,
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: Dims, spacing: Spacing, classes: ClassMap, labels: Vec<u8>) -> Result<Self> {
        dims.validate()?;
        if labels.len() != dims.len() {
            return Err(Error::DimsMismatch(format!(
                "{} labels supplied for {dims}",
                labels.len()
            )));
        }
        let c = classes.count();
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                classes: c,
            });
        }
        Ok(LabelVolume {
            dims,
            spacing,
            classes,
            labels,
        })
    }

    /// Volume filled with the background class.
    pub fn background(dims: Dims, spacing: Spacing, classes: ClassMap) -> Result<Self> {
        let bg = classes.background() as u8;
        LabelVolume::new(dims, spacing, classes, vec![bg; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn classes(&self) -> &ClassMap {
        &self.classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.dims.index(x, y, z)]
    }

    pub fn count_of(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&l| l as usize == class).count()
    }

    /// Mutable access for crate-internal writers that uphold the label bound.
    pub(crate) fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }
}

/// Per-voxel class probabilities: the per-axis "activations" that get
/// averaged. Channels are probabilities, not logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    dims: Dims,
    spacing: Spacing,
    classes: ClassMap,
    probs: Vec<f32>,
}

impl ProbVolume {
    /// Builds a probability volume, checking range and per-voxel sums.
    pub fn new(dims: Dims, spacing: Spacing, classes: ClassMap, probs: Vec<f32>) -> Result<Self> {
        let v = ProbVolume::new_unchecked(dims, spacing, classes, probs)?;
        v.check()?;
        Ok(v)
    }

    fn new_unchecked(
        dims: Dims,
        spacing: Spacing,
        classes: ClassMap,
        probs: Vec<f32>,
    ) -> Result<Self> {
        dims.validate()?;
        if probs.len() != dims.len() * classes.count() {
            return Err(Error::DimsMismatch(format!(
                "{} probabilities supplied for {dims} x {} channels",
                probs.len(),
                classes.count()
            )));
        }
        Ok(ProbVolume {
            dims,
            spacing,
            classes,
            probs,
        })
    }

    /// All-zero accumulator, filled by slice insertion.
    pub(crate) fn zeroed(dims: Dims, spacing: Spacing, classes: ClassMap) -> Self {
        let n = dims.len() * classes.count();
        ProbVolume {
            dims,
            spacing,
            classes,
            probs: vec![0.0; n],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn classes(&self) -> &ClassMap {
        &self.classes
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub(crate) fn probs_mut(&mut self) -> &mut [f32] {
        &mut self.probs
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.dims.len();
        &self.probs[c * n..(c + 1) * n]
    }

    pub fn voxel(&self, i: usize) -> Vec<f32> {
        let n = self.dims.len();
        (0..self.classes.count()).map(|c| self.probs[c * n + i]).collect()
    }

    /// Verifies channel range and sum-to-one for every voxel.
    pub fn check(&self) -> Result<()> {
        let n = self.dims.len();
        let c = self.classes.count();
        for i in 0..n {
            let mut sum = 0.0f64;
            for ch in 0..c {
                let p = self.probs[ch * n + i];
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidProbabilities(format!(
                        "voxel {i} channel {ch} = {p} outside [0, 1]"
                    )));
                }
                sum += p as f64;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE as f64 {
                return Err(Error::InvalidProbabilities(format!(
                    "voxel {i} channel sum {sum} differs from 1"
                )));
            }
        }
        Ok(())
    }
}

/// Row-major 2D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid2<T> {
    pub fn new(h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidSize(format!("grid {h}x{w}")));
        }
        if data.len() != h * w {
            return Err(Error::DimsMismatch(format!(
                "{} values supplied for {h}x{w} grid",
                data.len()
            )));
        }
        Ok(Grid2 { h, w, data })
    }

    pub fn filled(h: usize, w: usize, value: T) -> Result<Self> {
        Grid2::new(h, w, vec![value; h * w])
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.w + c]
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }
}

/// Per-class probability map for one 2D slice, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    channels: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl ProbMap {
    pub fn new(channels: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidSize(format!(
                "probability map {channels}x{h}x{w}"
            )));
        }
        if data.len() != channels * h * w {
            return Err(Error::DimsMismatch(format!(
                "{} values supplied for {channels}x{h}x{w} map",
                data.len()
            )));
        }
        Ok(ProbMap {
            channels,
            h,
            w,
            data,
        })
    }

    pub fn one_hot(labels: &Grid2<u8>, channels: usize) -> Self {
        let n = labels.h * labels.w;
        let mut data = vec![0.0f32; channels * n];
        for (i, &l) in labels.data.iter().enumerate() {
            data[l as usize * n + i] = 1.0;
        }
        ProbMap {
            channels,
            h: labels.h,
            w: labels.w,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Per-pixel argmax with lowest-index tie breaking.
    pub fn argmax(&self) -> Grid2<u8> {
        let n = self.h * self.w;
        let labels = (0..n)
            .map(|i| {
                let mut best = 0usize;
                let mut best_p = self.data[i];
                for c in 1..self.channels {
                    let p = self.data[c * n + i];
                    if p > best_p {
                        best = c;
                        best_p = p;
                    }
                }
                best as u8
            })
            .collect();
        Grid2 {
            h: self.h,
            w: self.w,
            data: labels,
        }
    }

    /// Bilinear resize of every channel; channel sums are restored afterwards.
    pub fn resize(&self, h: usize, w: usize) -> Result<ProbMap> {
        if h == self.h && w == self.w {
            return Ok(self.clone());
        }
        let n_out = h * w;
        let mut data = Vec::with_capacity(self.channels * n_out);
        for c in 0..self.channels {
            let src = Grid2 {
                h: self.h,
                w: self.w,
                data: self.channel(c).to_vec(),
            };
            data.extend(resize_bilinear_2d(&src, h, w)?.data);
        }
        let mut out = ProbMap {
            channels: self.channels,
            h,
            w,
            data,
        };
        out.renormalize_in_place();
        Ok(out)
    }

    /// Divides every pixel's channels by their sum. Pixels summing to zero are
    /// left untouched.
    pub fn renormalize_in_place(&mut self) {
        let n = self.h * self.w;
        for i in 0..n {
            let sum: f64 = (0..self.channels).map(|c| self.data[c * n + i] as f64).sum();
            if sum > 0.0 && sum != 1.0 {
                for c in 0..self.channels {
                    let p = &mut self.data[c * n + i];
                    *p = ((*p as f64) / sum).clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
}

/// Clips Hounsfield values to `[lo, hi]` and maps that range affinely onto
/// `[0, 1]`.
pub fn window_normalize(v: &ScalarVolume, lo: f32, hi: f32) -> Result<ScalarVolume> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidWindow { lo, hi });
    }
    if v.domain != Domain::Hounsfield {
        return Err(Error::Domain(
            "windowing expects a Hounsfield volume".to_string(),
        ));
    }
    let (lo64, width) = (lo as f64, hi as f64 - lo as f64);
    let data = v
        .data
        .iter()
        .map(|&x| ((x.clamp(lo, hi) as f64 - lo64) / width).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(ScalarVolume {
        dims: v.dims,
        spacing: v.spacing,
        domain: Domain::Normalized,
        data,
    })
}

/// Labels each voxel with its most probable class; ties go to the lowest
/// class index.
pub fn argmax_labels(p: &ProbVolume) -> LabelVolume {
    let n = p.dims.len();
    let c = p.classes.count();
    let mut labels = vec![0u8; n];
    let mut best = p.channel(0).to_vec();
    for ch in 1..c {
        for (i, &v) in p.channel(ch).iter().enumerate() {
            if v > best[i] {
                best[i] = v;
                labels[i] = ch as u8;
            }
        }
    }
    LabelVolume {
        dims: p.dims,
        spacing: p.spacing,
        classes: p.classes.clone(),
        labels,
    }
}

pub fn one_hot(l: &LabelVolume) -> ProbVolume {
    let n = l.dims.len();
    let mut probs = vec![0.0f32; n * l.classes.count()];
    for (i, &lab) in l.labels.iter().enumerate() {
        probs[lab as usize * n + i] = 1.0;
    }
    ProbVolume {
        dims: l.dims,
        spacing: l.spacing,
        classes: l.classes.clone(),
        probs,
    }
}

/// Continuous source coordinate for output pixel `i` under the pixel-center
/// convention, clamped to the valid sample range.
#[inline]
fn source_coord(i: usize, n_src: usize, n_dst: usize) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(n_src - 1);
    (i0, i1, s - i0 as f64)
}

#[inline]
fn lerp_bounded(a: f64, b: f64, t: f64) -> f64 {
    let v = a + (b - a) * t;
    v.clamp(a.min(b), a.max(b))
}

/// Bilinear resize with pixel centers at `(i + 0.5) / n`.
pub fn resize_bilinear_2d(img: &Grid2<f32>, h: usize, w: usize) -> Result<Grid2<f32>> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidSize(format!("resize target {h}x{w}")));
    }
    if h == img.h && w == img.w {
        return Ok(img.clone());
    }
    let cols: Vec<_> = (0..w).map(|c| source_coord(c, img.w, w)).collect();
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        let (r0, r1, tr) = source_coord(r, img.h, h);
        let row0 = &img.data[r0 * img.w..(r0 + 1) * img.w];
        let row1 = &img.data[r1 * img.w..(r1 + 1) * img.w];
        for &(c0, c1, tc) in &cols {
            let top = lerp_bounded(row0[c0] as f64, row0[c1] as f64, tc);
            let bottom = lerp_bounded(row1[c0] as f64, row1[c1] as f64, tc);
            data.push(lerp_bounded(top, bottom, tr) as f32);
        }
    }
    Ok(Grid2 { h, w, data })
}

/// Nearest source index for output index `i`: `floor((i + 0.5) * n_src / n_dst)`.
#[inline]
pub(crate) fn nearest_index(i: usize, n_src: usize, n_dst: usize) -> usize {
    ((2 * i + 1) * n_src / (2 * n_dst)).min(n_src - 1)
}

pub fn resize_nearest_2d<T: Copy>(img: &Grid2<T>, h: usize, w: usize) -> Result<Grid2<T>> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidSize(format!("resize target {h}x{w}")));
    }
    if h == img.h && w == img.w {
        return Ok(img.clone());
    }
    let cols: Vec<usize> = (0..w).map(|c| nearest_index(c, img.w, w)).collect();
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        let row = nearest_index(r, img.h, h) * img.w;
        data.extend(cols.iter().map(|&c| img.data[row + c]));
    }
    Ok(Grid2 { h, w, data })
}

pub fn resize_nearest_3d(l: &LabelVolume, target: Dims) -> Result<LabelVolume> {
    target.validate()?;
    if target == l.dims {
        return Ok(l.clone());
    }
    let src = l.dims;
    let xs: Vec<usize> = (0..target.nx)
        .map(|x| nearest_index(x, src.nx, target.nx))
        .collect();
    let mut labels = Vec::with_capacity(target.len());
    for z in 0..target.nz {
        let sz = nearest_index(z, src.nz, target.nz);
        for y in 0..target.ny {
            let sy = nearest_index(y, src.ny, target.ny);
            let base = src.index(0, sy, sz);
            labels.extend(xs.iter().map(|&sx| l.labels[base + sx]));
        }
    }
    // Spacing scales with the resampling factor so physical extent is kept.
    let spacing = Spacing::new(
        l.spacing.sx * src.nx as f64 / target.nx as f64,
        l.spacing.sy * src.ny as f64 / target.ny as f64,
        l.spacing.sz * src.nz as f64 / target.nz as f64,
    )?;
    Ok(LabelVolume {
        dims: target,
        spacing,
        classes: l.classes.clone(),
        labels,
    })
}
