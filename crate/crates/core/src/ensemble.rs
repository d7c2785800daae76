//! Per-axis probability reconstruction, multi-axis averaging and voxel
//! labeling.
//!
//! Every slice's probability map is resized back to its native in-plane size
//! before insertion, so all per-axis volumes share the scan's grid and are
//! averaged there directly.

use log::{debug, info};

use crate::error::{Error, Result};
use crate::segmenter::{segment_checked, SegmenterFactory, SliceInput, SliceSegmenter};
use crate::slicer::{slice_count, target_size, Axis, SliceSizePolicy, Sliceable};
use crate::volume::{
    argmax_labels, resize_bilinear_2d, window_normalize, ClassMap, Dims, Domain, LabelVolume,
    ProbVolume, ScalarVolume, Spacing,
};

/// Probabilities reconstructed from one axis' slices, at the scan's dims.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisResult {
    pub axis: Axis,
    pub probs: ProbVolume,
}

/// Runs every slice along `axis` through the segmenter and reassembles the
/// probability volume.
pub fn infer_axis<S: SliceSegmenter + ?Sized>(
    v: &ScalarVolume,
    axis: Axis,
    seg: &mut S,
    policy: &SliceSizePolicy,
) -> Result<AxisResult> {
    if v.domain() != Domain::Normalized {
        return Err(Error::Domain(
            "inference expects a windowed (normalized) volume".to_string(),
        ));
    }
    policy.validate()?;
    let classes = seg.classes().clone();
    let mut probs = ProbVolume::zeroed(v.dims(), v.spacing(), classes);
    let (h, w) = axis.plane_dims(v.dims());
    let (th, tw) = target_size(h, w, policy);
    debug!("{axis}: {} slices of {h}x{w}, segmenter size {th}x{tw}", slice_count(v.dims(), axis));
    for index in 0..slice_count(v.dims(), axis) {
        let at = |e: Error| Error::AtSlice {
            axis: axis.name(),
            index,
            source: Box::new(e),
        };
        let slice = v.extract_slice(axis, index)?;
        let image = resize_bilinear_2d(&slice, th, tw)?;
        let map = segment_checked(seg, SliceInput { index, image: &image }).map_err(at)?;
        let map = map.resize(h, w)?;
        probs.insert_slice(axis, index, &map)?;
    }
    Ok(AxisResult { axis, probs })
}

/// Streaming voxelwise mean of probability volumes. Sums are kept in `f64`
/// and divided once at the end.
#[derive(Debug, Clone)]
pub struct ProbAverager {
    dims: Dims,
    spacing: Spacing,
    classes: ClassMap,
    sum: Vec<f64>,
    count: usize,
}

impl ProbAverager {
    pub fn new(dims: Dims, spacing: Spacing, classes: ClassMap) -> Self {
        let n = dims.len() * classes.count();
        ProbAverager {
            dims,
            spacing,
            classes,
            sum: vec![0.0; n],
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add(&mut self, p: &ProbVolume) -> Result<()> {
        if p.dims() != self.dims {
            return Err(Error::DimsMismatch(format!(
                "cannot average {} with {}",
                p.dims(),
                self.dims
            )));
        }
        if p.classes() != &self.classes {
            return Err(Error::ClassMismatch(
                "cannot average volumes with different class maps".to_string(),
            ));
        }
        for (s, &x) in self.sum.iter_mut().zip(p.probs()) {
            *s += x as f64;
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<ProbVolume> {
        if self.count == 0 {
            return Err(Error::NoContent("nothing to average".to_string()));
        }
        let k = self.count as f64;
        let probs = self.sum.into_iter().map(|s| (s / k) as f32).collect();
        ProbVolume::new(self.dims, self.spacing, self.classes, probs)
    }
}

/// Voxelwise arithmetic mean of per-axis results.
pub fn average_axes(results: &[AxisResult]) -> Result<ProbVolume> {
    let first = results
        .first()
        .ok_or_else(|| Error::NoContent("no axis results to average".to_string()))?;
    let mut avg = ProbAverager::new(
        first.probs.dims(),
        first.probs.spacing(),
        first.probs.classes().clone(),
    );
    for r in results {
        avg.add(&r.probs)?;
    }
    avg.finish()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    /// HU window applied before inference.
    pub window: (f32, f32),
    pub policy: SliceSizePolicy,
    /// Keep each axis' probability volume in the output. Off by default since
    /// a large scan needs several hundred MB per axis.
    pub keep_axis_probs: bool,
    /// Keep the averaged probability volume in the output.
    pub keep_ensemble_probs: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            window: crate::volume::DEFAULT_WINDOW,
            policy: SliceSizePolicy::default(),
            keep_axis_probs: false,
            keep_ensemble_probs: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Ensemble prediction.
    pub labels: LabelVolume,
    /// Argmax of each single axis, from the same backend outputs.
    pub axis_labels: Vec<(Axis, LabelVolume)>,
    pub axis_probs: Vec<AxisResult>,
    pub ensemble_probs: Option<ProbVolume>,
}

impl PipelineOutput {
    pub fn axis_label(&self, axis: Axis) -> Option<&LabelVolume> {
        self.axis_labels
            .iter()
            .find(|(a, _)| *a == axis)
            .map(|(_, l)| l)
    }
}

/// Window, infer along each axis, average, label. Aborts on the first backend
/// failure.
pub fn run_pipeline(
    v: &ScalarVolume,
    axes: &[Axis],
    classes: &ClassMap,
    factory: &mut SegmenterFactory<'_>,
    options: &PipelineOptions,
) -> Result<PipelineOutput> {
    if axes.is_empty() {
        return Err(Error::Config("no axes selected".to_string()));
    }
    for (i, a) in axes.iter().enumerate() {
        if axes[..i].contains(a) {
            return Err(Error::Config(format!("axis {a} listed twice")));
        }
    }
    let (lo, hi) = options.window;
    let normalized = window_normalize(v, lo, hi)?;
    let mut avg = ProbAverager::new(v.dims(), v.spacing(), classes.clone());
    let mut axis_labels = Vec::with_capacity(axes.len());
    let mut axis_probs = Vec::new();
    for &axis in axes {
        let mut seg = factory(axis)?;
        if seg.classes() != classes {
            return Err(Error::ClassMismatch(format!(
                "{axis} segmenter serves classes {:?}, pipeline expects {:?}",
                seg.classes().names(),
                classes.names()
            )));
        }
        info!("inferring {axis} axis");
        let result = infer_axis(&normalized, axis, &mut seg, &options.policy)?;
        drop(seg);
        avg.add(&result.probs)?;
        axis_labels.push((axis, argmax_labels(&result.probs)));
        if options.keep_axis_probs {
            axis_probs.push(result);
        }
    }
    let ensemble = avg.finish()?;
    let labels = argmax_labels(&ensemble);
    Ok(PipelineOutput {
        labels,
        axis_labels,
        axis_probs,
        ensemble_probs: options.keep_ensemble_probs.then_some(ensemble),
    })
}
