//! Ground-truth-backed segmenter with optional per-pixel class-flip noise.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SliceInput, SliceSegmenter};
use crate::error::{Error, Result};
use crate::slicer::{slice_count, Axis, Sliceable};
use crate::volume::{resize_nearest_2d, ClassMap, Grid2, LabelVolume, ProbMap};

/// Flip probability per axis plus the seed all noise streams derive from.
/// Axes without an entry are noise-free.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    #[serde(default)]
    pub epsilon: BTreeMap<Axis, f64>,
    #[serde(default)]
    pub base_seed: u64,
}

impl NoiseConfig {
    pub fn uniform(eps: f64, base_seed: u64) -> Self {
        NoiseConfig {
            epsilon: Axis::ALL.iter().map(|&a| (a, eps)).collect(),
            base_seed,
        }
    }

    pub fn epsilon(&self, axis: Axis) -> f64 {
        self.epsilon.get(&axis).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, &e) in &self.epsilon {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config(format!(
                    "noise epsilon for {axis} must be in [0, 1], got {e}"
                )));
            }
        }
        Ok(())
    }
}

/// Seed for the noise stream of one (axis, slice):
///
/// ```text
/// z = base ^ (axis_ordinal + 1) * 0x9E3779B97F4A7C15 ^ (index + 1) * 0xC2B2AE3D27D4EB4F
/// ```
///
/// (wrapping multiplies) followed by the splitmix64 finalizer.
pub fn mix_seed(base_seed: u64, axis: Axis, index: usize) -> u64 {
    let mut z = base_seed
        ^ (axis.ordinal() + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64 + 1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Replaces each label, with probability `eps`, by a uniformly drawn class.
/// Pixels are visited in row-major order; each draws one `f64` and, when
/// flipped, one class index from a ChaCha8 stream.
pub fn flip_labels(labels: &mut [u8], classes: usize, eps: f64, seed: u64) {
    if eps <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in labels.iter_mut() {
        let u: f64 = rng.random();
        if u < eps {
            *l = rng.random_range(0..classes) as u8;
        }
    }
}

/// Serves one-hot ground-truth slices along a fixed axis. When the request is
/// not at native slice size the ground-truth slice is resampled to it with
/// nearest-neighbour sampling.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    gt: Arc<LabelVolume>,
    axis: Axis,
    eps: f64,
    seed: u64,
}

impl OracleSegmenter {
    pub fn new(gt: Arc<LabelVolume>, axis: Axis, noise: &NoiseConfig) -> Result<Self> {
        noise.validate()?;
        Ok(OracleSegmenter {
            gt,
            axis,
            eps: noise.epsilon(axis),
            seed: noise.base_seed,
        })
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    /// Noisy label slice at the requested size.
    pub fn labels(&self, index: usize, h: usize, w: usize) -> Result<Grid2<u8>> {
        let limit = slice_count(self.gt.dims(), self.axis);
        if index >= limit {
            return Err(Error::IndexOutOfRange { index, limit });
        }
        let slice = self.gt.extract_slice(self.axis, index)?;
        let slice = resize_nearest_2d(&slice, h, w)?;
        let mut data = slice.into_data();
        flip_labels(
            &mut data,
            self.gt.classes().count(),
            self.eps,
            mix_seed(self.seed, self.axis, index),
        );
        Grid2::new(h, w, data)
    }
}

impl SliceSegmenter for OracleSegmenter {
    fn classes(&self) -> &ClassMap {
        self.gt.classes()
    }

    fn segment(&mut self, input: SliceInput<'_>) -> Result<ProbMap> {
        let labels = self.labels(input.index, input.image.h(), input.image.w())?;
        Ok(ProbMap::one_hot(&labels, self.gt.classes().count()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::segment_checked;
    use crate::volume::{Dims, Spacing};
    use rand::Rng;

    fn random_gt(dims: Dims, seed: u64) -> Arc<LabelVolume> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = (0..dims.len()).map(|_| rng.random_range(0..5u8)).collect();
        Arc::new(LabelVolume::new(dims, Spacing::unit(), ClassMap::cardiac(), labels).unwrap())
    }

    fn run(seg: &mut OracleSegmenter, index: usize, h: usize, w: usize) -> ProbMap {
        let img = Grid2::filled(h, w, 0.0).unwrap();
        segment_checked(seg, SliceInput { index, image: &img }).unwrap()
    }

    #[test]
    fn noise_free_is_exact_one_hot() {
        let gt = random_gt(Dims::new(7, 5, 4), 1);
        for axis in Axis::ALL {
            let mut seg = OracleSegmenter::new(gt.clone(), axis, &NoiseConfig::default()).unwrap();
            let (h, w) = axis.plane_dims(gt.dims());
            for index in 0..slice_count(gt.dims(), axis) {
                let out = run(&mut seg, index, h, w);
                assert_eq!(out, ProbMap::one_hot(&gt.extract_slice(axis, index).unwrap(), 5));
                assert_eq!(out.argmax(), gt.extract_slice(axis, index).unwrap());
            }
        }
    }

    #[test]
    fn full_noise_agrees_one_in_five() {
        let gt = random_gt(Dims::new(128, 128, 2), 2);
        let mut seg = OracleSegmenter::new(gt.clone(), Axis::Axial, &NoiseConfig::uniform(1.0, 9))
            .unwrap();
        let mut agree = 0usize;
        let mut n = 0usize;
        for index in 0..2 {
            let out = run(&mut seg, index, 128, 128).argmax();
            let truth = gt.extract_slice(Axis::Axial, index).unwrap();
            agree += out.data().iter().zip(truth.data()).filter(|(a, b)| a == b).count();
            n += out.data().len();
        }
        // Binomial(n, 1/5): mean n/5, sigma sqrt(n * 0.2 * 0.8).
        let mean = n as f64 / 5.0;
        let sigma = (n as f64 * 0.2 * 0.8).sqrt();
        assert!(n >= 10_000);
        assert!(
            (agree as f64 - mean).abs() <= 3.0 * sigma,
            "agreement {agree} vs expected {mean} +/- {}",
            3.0 * sigma
        );
    }

    #[test]
    fn deterministic_and_axis_independent() {
        let gt = random_gt(Dims::cube(32), 3);
        let noise = NoiseConfig::uniform(0.3, 77);
        let mut a = OracleSegmenter::new(gt.clone(), Axis::Axial, &noise).unwrap();
        let mut b = OracleSegmenter::new(gt.clone(), Axis::Axial, &noise).unwrap();
        assert_eq!(run(&mut a, 4, 32, 32), run(&mut b, 4, 32, 32));
        assert_ne!(mix_seed(77, Axis::Axial, 4), mix_seed(77, Axis::Coronal, 4));
        assert_ne!(mix_seed(77, Axis::Axial, 4), mix_seed(77, Axis::Axial, 5));
        assert_ne!(mix_seed(77, Axis::Axial, 4), mix_seed(78, Axis::Axial, 4));
    }

    #[test]
    fn mix_seed_reference_values() {
        // Recomputed from the documented formula with plain u128 arithmetic.
        fn reference(base: u64, axis: u64, index: u64) -> u64 {
            let m = |a: u64, b: u64| ((a as u128 * b as u128) & u64::MAX as u128) as u64;
            let mut z = base ^ m(axis + 1, 0x9E3779B97F4A7C15) ^ m(index + 1, 0xC2B2AE3D27D4EB4F);
            z = m(z ^ (z >> 30), 0xBF58476D1CE4E5B9);
            z = m(z ^ (z >> 27), 0x94D049BB133111EB);
            z ^ (z >> 31)
        }
        for (base, axis, index) in [(0u64, Axis::Axial, 0usize), (42, Axis::Sagittal, 319), (u64::MAX, Axis::Coronal, 7)] {
            assert_eq!(mix_seed(base, axis, index), reference(base, axis.ordinal(), index as u64));
        }
    }

    #[test]
    fn rejects_bad_index_and_epsilon() {
        let gt = random_gt(Dims::cube(4), 4);
        let mut seg = OracleSegmenter::new(gt.clone(), Axis::Axial, &NoiseConfig::default()).unwrap();
        let img = Grid2::filled(4, 4, 0.0).unwrap();
        assert!(matches!(
            seg.segment(SliceInput { index: 4, image: &img }),
            Err(Error::IndexOutOfRange { index: 4, limit: 4 })
        ));
        assert!(OracleSegmenter::new(gt, Axis::Axial, &NoiseConfig::uniform(1.5, 0)).is_err());
    }

    #[test]
    fn resampled_request_uses_nearest_gt() {
        let gt = random_gt(Dims::new(3, 2, 1), 5);
        let mut seg = OracleSegmenter::new(gt.clone(), Axis::Axial, &NoiseConfig::default()).unwrap();
        let out = run(&mut seg, 0, 4, 6).argmax();
        for r in 0..4 {
            for c in 0..6 {
                assert_eq!(out.get(r, c), gt.get(c / 2, r / 2, 0));
            }
        }
    }
}
