//! Deterministic ellipsoid phantoms: a Hounsfield scan and its labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{ClassMap, Dims, Domain, LabelVolume, ScalarVolume, Spacing, HU_MAX, HU_MIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipsoid {
    /// Centre in voxel coordinates.
    pub center: [f64; 3],
    /// Semi-axes in voxels.
    pub semi_axes: [f64; 3],
    pub class: usize,
    /// Interior intensity in HU.
    pub hu: f32,
}

impl Ellipsoid {
    #[inline]
    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let p = [x, y, z];
        let mut s = 0.0;
        for i in 0..3 {
            let d = (p[i] - self.center[i]) / self.semi_axes[i];
            s += d * d;
        }
        s <= 1.0
    }

    /// Inclusive voxel bounding box, clipped to `dims`.
    fn voxel_bounds(&self, dims: Dims, grow: f64) -> [(usize, usize); 3] {
        let n = dims.as_array();
        [0, 1, 2].map(|i| {
            let lo = (self.center[i] - self.semi_axes[i] - grow).ceil().max(0.0) as usize;
            let hi = (self.center[i] + self.semi_axes[i] + grow).floor();
            let hi = (hi.max(0.0) as usize).min(n[i] - 1);
            (lo, hi)
        })
    }
}

fn default_background_hu() -> f32 {
    -100.0
}

fn default_shell_hu() -> f32 {
    40.0
}

fn default_shell_thickness() -> f64 {
    2.0
}

/// Phantom description; serializes to JSON for the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: Dims,
    #[serde(default = "Spacing::unit")]
    pub spacing: Spacing,
    #[serde(default)]
    pub classes: ClassMap,
    pub ellipsoids: Vec<Ellipsoid>,
    #[serde(default = "default_background_hu")]
    pub background_hu: f32,
    /// Soft-tissue wall drawn around each ellipsoid (labelled background).
    #[serde(default = "default_shell_hu")]
    pub shell_hu: f32,
    /// Wall thickness in voxels; 0 disables it.
    #[serde(default = "default_shell_thickness")]
    pub shell_thickness: f64,
    /// Amplitude of uniform intensity noise in HU.
    #[serde(default)]
    pub noise_hu: f32,
    #[serde(default)]
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate().map_err(|e| Error::InvalidPhantom(e.to_string()))?;
        let bad = |msg: String| Err(Error::InvalidPhantom(msg));
        let hu_ok = |v: f32| v.is_finite() && (HU_MIN..=HU_MAX).contains(&v);
        if !hu_ok(self.background_hu) || !hu_ok(self.shell_hu) {
            return bad("background and shell HU must lie in the Hounsfield range".to_string());
        }
        if !(self.shell_thickness.is_finite() && self.shell_thickness >= 0.0) {
            return bad(format!("shell thickness {} is invalid", self.shell_thickness));
        }
        if !(self.noise_hu.is_finite() && self.noise_hu >= 0.0) {
            return bad(format!("noise amplitude {} is invalid", self.noise_hu));
        }
        let n = self.dims.as_array();
        for (k, e) in self.ellipsoids.iter().enumerate() {
            if e.class >= self.classes.count() {
                return bad(format!(
                    "ellipsoid {k}: class {} not in a {}-class map",
                    e.class,
                    self.classes.count()
                ));
            }
            if !hu_ok(e.hu) {
                return bad(format!("ellipsoid {k}: HU {} outside the Hounsfield range", e.hu));
            }
            for i in 0..3 {
                let (c, a) = (e.center[i], e.semi_axes[i]);
                if !(a.is_finite() && a > 0.0) || !c.is_finite() {
                    return bad(format!("ellipsoid {k}: non-positive or non-finite geometry"));
                }
                if c - a < 0.0 || c + a > (n[i] - 1) as f64 {
                    return bad(format!(
                        "ellipsoid {k} extends outside the {} volume along axis {i}",
                        self.dims
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Rasterizes the spec. A voxel belongs to ellipsoid `e` when
/// `sum(((p - c) / a)^2) <= 1`; later ellipsoids overwrite earlier ones.
pub fn generate(spec: &PhantomSpec) -> Result<(ScalarVolume, LabelVolume)> {
    spec.validate()?;
    let dims = spec.dims;
    let bg = spec.classes.background();
    let mut hu = vec![spec.background_hu; dims.len()];
    let mut labels = vec![bg as u8; dims.len()];

    if spec.shell_thickness > 0.0 {
        for e in &spec.ellipsoids {
            let grown = Ellipsoid {
                semi_axes: e.semi_axes.map(|a| a + spec.shell_thickness),
                ..e.clone()
            };
            let [(x0, x1), (y0, y1), (z0, z1)] = e.voxel_bounds(dims, spec.shell_thickness);
            for z in z0..=z1 {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        if grown.contains(x as f64, y as f64, z as f64) {
                            hu[dims.index(x, y, z)] = spec.shell_hu;
                        }
                    }
                }
            }
        }
    }
    for e in &spec.ellipsoids {
        let [(x0, x1), (y0, y1), (z0, z1)] = e.voxel_bounds(dims, 0.0);
        for z in z0..=z1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if e.contains(x as f64, y as f64, z as f64) {
                        let i = dims.index(x, y, z);
                        hu[i] = e.hu;
                        labels[i] = e.class as u8;
                    }
                }
            }
        }
    }
    if spec.noise_hu > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let a = spec.noise_hu;
        for v in hu.iter_mut() {
            *v = (*v + rng.random_range(-a..=a)).clamp(HU_MIN, HU_MAX);
        }
    }
    let scan = ScalarVolume::new(dims, spec.spacing, Domain::Hounsfield, hu)?;
    let labels = LabelVolume::new(dims, spec.spacing, spec.classes.clone(), labels)?;
    Ok((scan, labels))
}

/// Interior HU of the four chambers: contrast-filled blood pools, kept apart
/// so each class has its own intensity.
pub const CHAMBER_HU: [f32; 4] = [260.0, 290.0, 320.0, 350.0];

/// Smallest accepted side length for the four-chamber preset.
pub const PRESET_MIN_DIM: usize = 64;

/// Minimum gap between chamber bounding boxes, in voxels.
pub const PRESET_MIN_GAP: f64 = 2.0;

/// Four chambers (classes 0-3) in the four x-y quadrants, centred in z. Base
/// semi-axes are 16% of the side in x and y and 25% in z; each is scaled by a
/// seeded factor in [0.75, 1.25].
pub fn four_chamber_preset(dims: Dims, seed: u64) -> Result<PhantomSpec> {
    if dims.nx < PRESET_MIN_DIM || dims.ny < PRESET_MIN_DIM || dims.nz < PRESET_MIN_DIM {
        return Err(Error::InvalidPhantom(format!(
            "four-chamber preset needs at least {PRESET_MIN_DIM} voxels per side, got {dims}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.as_array().map(|v| v as f64);
    let quadrants = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)];
    let ellipsoids: Vec<Ellipsoid> = quadrants
        .iter()
        .enumerate()
        .map(|(class, &(fx, fy))| {
            let base = [0.16 * n[0], 0.16 * n[1], 0.25 * n[2]];
            Ellipsoid {
                center: [(fx * n[0]).floor(), (fy * n[1]).floor(), (n[2] / 2.0).floor()],
                semi_axes: base.map(|a| a * rng.random_range(0.75..=1.25)),
                class,
                hu: CHAMBER_HU[class],
            }
        })
        .collect();

    for i in 0..ellipsoids.len() {
        for j in i + 1..ellipsoids.len() {
            let (a, b) = (&ellipsoids[i], &ellipsoids[j]);
            let gap = (0..3)
                .map(|k| (a.center[k] - b.center[k]).abs() - a.semi_axes[k] - b.semi_axes[k])
                .fold(f64::MIN, f64::max);
            if gap < PRESET_MIN_GAP {
                return Err(Error::InvalidPhantom(format!(
                    "chambers {i} and {j} are closer than {PRESET_MIN_GAP} voxels in {dims}"
                )));
            }
        }
    }
    let spec = PhantomSpec {
        dims,
        spacing: Spacing::unit(),
        classes: ClassMap::cardiac(),
        ellipsoids,
        background_hu: default_background_hu(),
        shell_hu: default_shell_hu(),
        shell_thickness: default_shell_thickness(),
        noise_hu: 0.0,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_spec(dims: Dims, center: [f64; 3], r: f64) -> PhantomSpec {
        PhantomSpec {
            dims,
            spacing: Spacing::unit(),
            classes: ClassMap::cardiac(),
            ellipsoids: vec![Ellipsoid { center, semi_axes: [r; 3], class: 0, hu: 300.0 }],
            background_hu: -100.0,
            shell_hu: 40.0,
            shell_thickness: 2.0,
            noise_hu: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn empty_spec_is_background() {
        let mut spec = sphere_spec(Dims::cube(8), [4.0; 3], 1.0);
        spec.ellipsoids.clear();
        let (scan, labels) = generate(&spec).unwrap();
        assert_eq!(labels.count_of(4), 512);
        assert!(scan.data().iter().all(|&v| v == -100.0));
    }

    #[test]
    fn sphere_voxel_count() {
        let (_, labels) = generate(&sphere_spec(Dims::cube(64), [32.0; 3], 8.0)).unwrap();
        // Brute-force containment count over the whole grid.
        let mut expected = 0;
        for z in 0..64i64 {
            for y in 0..64i64 {
                for x in 0..64i64 {
                    if (x - 32).pow(2) + (y - 32).pow(2) + (z - 32).pow(2) <= 64 {
                        expected += 1;
                    }
                }
            }
        }
        assert_eq!(labels.count_of(0), expected);
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 512.0;
        assert!((expected as f64 - analytic).abs() / analytic < 0.02);
    }

    #[test]
    fn deterministic_with_noise() {
        let mut spec = sphere_spec(Dims::cube(16), [8.0; 3], 4.0);
        spec.noise_hu = 20.0;
        spec.seed = 11;
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let (scan, labels) = generate(&spec).unwrap();
        for (v, &l) in scan.data().iter().zip(labels.labels()) {
            if l != 4 {
                assert!(*v > -200.0 && *v < 500.0);
            }
        }
    }

    #[test]
    fn later_ellipsoids_win() {
        let mut spec = sphere_spec(Dims::cube(16), [8.0; 3], 4.0);
        spec.ellipsoids.push(Ellipsoid { center: [8.0; 3], semi_axes: [2.0; 3], class: 1, hu: 200.0 });
        let (scan, labels) = generate(&spec).unwrap();
        assert_eq!(labels.get(8, 8, 8), 1);
        assert_eq!(scan.get(8, 8, 8), 200.0);
        assert_eq!(labels.get(8, 8, 11), 0);
    }

    #[test]
    fn invalid_specs() {
        let outside = sphere_spec(Dims::cube(16), [2.0, 8.0, 8.0], 4.0);
        assert!(matches!(generate(&outside), Err(Error::InvalidPhantom(_))));
        let mut bad_class = sphere_spec(Dims::cube(16), [8.0; 3], 2.0);
        bad_class.ellipsoids[0].class = 5;
        assert!(generate(&bad_class).is_err());
        let mut flat = sphere_spec(Dims::cube(16), [8.0; 3], 2.0);
        flat.ellipsoids[0].semi_axes[1] = 0.0;
        assert!(generate(&flat).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = four_chamber_preset(Dims::cube(64), 3).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<PhantomSpec>(&json).unwrap(), spec);
        let minimal: PhantomSpec = serde_json::from_str(
            r#"{"dims":[8,8,8],"ellipsoids":[{"center":[4,4,4],"semi_axes":[2,2,2],"class":1,"hu":300}]}"#,
        )
        .unwrap();
        assert_eq!(minimal.classes, ClassMap::cardiac());
        assert!(generate(&minimal).is_ok());
    }

    #[test]
    fn preset_properties() {
        for seed in 0..10 {
            let spec = four_chamber_preset(Dims::cube(64), seed).unwrap();
            let (scan, labels) = generate(&spec).unwrap();
            for c in 0..4 {
                assert!(labels.count_of(c) > 0, "seed {seed} class {c}");
            }
            for (v, &l) in scan.data().iter().zip(labels.labels()) {
                if l != 4 {
                    assert!(*v > -200.0 && *v < 500.0);
                }
            }
            for e in &spec.ellipsoids {
                for (i, &a) in e.semi_axes.iter().enumerate() {
                    let base = if i == 2 { 0.25 } else { 0.16 } * 64.0;
                    assert!(a >= 0.75 * base - 1e-9 && a <= 1.25 * base + 1e-9);
                }
            }
        }
        assert_ne!(four_chamber_preset(Dims::cube(64), 1).unwrap(), four_chamber_preset(Dims::cube(64), 2).unwrap());
        assert!(four_chamber_preset(Dims::new(64, 63, 64), 0).is_err());
    }
}
