//! The 2D slice segmenter contract and its backends.
//!
//! A segmenter maps a normalized slice image to per-class probabilities of
//! the same in-plane size. Backends are checked at the boundary by
//! [`segment_checked`]: channel values must lie in `[0, 1]` and per-pixel
//! sums within [`RENORMALIZE_BAND`] of one (they are then renormalized).

pub mod external;
pub mod oracle;
pub mod protocol;

pub use external::ExternalSegmenter;
pub use oracle::{mix_seed, NoiseConfig, OracleSegmenter};

use crate::error::{Error, Result};
use crate::slicer::Axis;
use crate::volume::{ClassMap, Grid2, ProbMap};

/// Accepted per-pixel channel-sum band before renormalization.
pub const RENORMALIZE_BAND: (f64, f64) = (0.99, 1.01);

/// One slice handed to a segmenter. `index` is the slice position along the
/// segmenter's axis; backends that do not need it may ignore it.
#[derive(Debug, Clone, Copy)]
pub struct SliceInput<'a> {
    pub index: usize,
    pub image: &'a Grid2<f32>,
}

pub trait SliceSegmenter {
    fn classes(&self) -> &ClassMap;

    fn segment(&mut self, input: SliceInput<'_>) -> Result<ProbMap>;
}

impl<S: SliceSegmenter + ?Sized> SliceSegmenter for Box<S> {
    fn classes(&self) -> &ClassMap {
        (**self).classes()
    }

    fn segment(&mut self, input: SliceInput<'_>) -> Result<ProbMap> {
        (**self).segment(input)
    }
}

/// Builds one segmenter per axis.
pub type SegmenterFactory<'a> = dyn FnMut(Axis) -> Result<Box<dyn SliceSegmenter>> + 'a;

/// Validates a backend's output and renormalizes each pixel's channels.
pub fn validate_output(map: ProbMap, classes: usize, h: usize, w: usize) -> Result<ProbMap> {
    if map.channels() != classes || map.h() != h || map.w() != w {
        return Err(Error::InvalidProbabilities(format!(
            "expected {classes}x{h}x{w} map, backend returned {}x{}x{}",
            map.channels(),
            map.h(),
            map.w()
        )));
    }
    let n = h * w;
    let data = map.data();
    for i in 0..n {
        let mut sum = 0.0f64;
        for c in 0..classes {
            let p = data[c * n + i];
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidProbabilities(format!(
                    "pixel {i} channel {c} = {p} outside [0, 1]"
                )));
            }
            sum += p as f64;
        }
        if !(RENORMALIZE_BAND.0..=RENORMALIZE_BAND.1).contains(&sum) {
            return Err(Error::InvalidProbabilities(format!(
                "pixel {i} channel sum {sum} outside [{}, {}]",
                RENORMALIZE_BAND.0, RENORMALIZE_BAND.1
            )));
        }
    }
    let mut map = map;
    map.renormalize_in_place();
    Ok(map)
}

/// Runs one slice through a segmenter and validates the result.
pub fn segment_checked<S: SliceSegmenter + ?Sized>(
    seg: &mut S,
    input: SliceInput<'_>,
) -> Result<ProbMap> {
    let c = seg.classes().count();
    let (h, w) = (input.image.h(), input.image.w());
    validate_output(seg.segment(input)?, c, h, w)
}

/// Segments slices in order; output `i` belongs to input `i`. Errors carry the
/// position of the failing slice.
pub fn segment_batch<S: SliceSegmenter + ?Sized>(
    seg: &mut S,
    axis: Axis,
    slices: &[SliceInput<'_>],
) -> Result<Vec<ProbMap>> {
    slices
        .iter()
        .map(|&input| {
            segment_checked(seg, input).map_err(|e| Error::AtSlice {
                axis: axis.name(),
                index: input.index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Returns `1 / C` for every class at every pixel.
#[derive(Debug, Clone)]
pub struct UniformSegmenter {
    classes: ClassMap,
}

impl UniformSegmenter {
    pub fn new(classes: ClassMap) -> Self {
        UniformSegmenter { classes }
    }
}

impl SliceSegmenter for UniformSegmenter {
    fn classes(&self) -> &ClassMap {
        &self.classes
    }

    fn segment(&mut self, input: SliceInput<'_>) -> Result<ProbMap> {
        let c = self.classes.count();
        let (h, w) = (input.image.h(), input.image.w());
        ProbMap::new(c, h, w, vec![1.0 / c as f32; c * h * w])
    }
}
