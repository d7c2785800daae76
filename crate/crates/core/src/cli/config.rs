//! Pipeline configuration: a JSON file overlaid with command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmenter::{
    ExternalSegmenter, NoiseConfig, OracleSegmenter, SegmenterFactory, SliceSegmenter,
    UniformSegmenter,
};
use crate::slicer::{parse_axes, Axis, SliceSizePolicy};
use crate::volume::{ClassMap, LabelVolume, DEFAULT_WINDOW};

/// Which segmenter serves the slices.
///
/// Grammar: `oracle[:key=value,...]` with keys `eps`, `seed` and per-axis
/// `axial`/`coronal`/`sagittal` flip probabilities; `uniform`; or
/// `exec:<command line>`, where `{axis}` in the command is replaced by the
/// axis name.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Oracle {
        eps: BTreeMap<Axis, f64>,
        seed: Option<u64>,
    },
    Uniform,
    Exec(String),
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Oracle {
            eps: BTreeMap::new(),
            seed: None,
        }
    }
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(cmd) = s.strip_prefix("exec:") {
            if cmd.trim().is_empty() {
                return Err(Error::Config("exec backend needs a command".to_string()));
            }
            return Ok(BackendSpec::Exec(cmd.to_string()));
        }
        if s == "uniform" {
            return Ok(BackendSpec::Uniform);
        }
        let params = match s.strip_prefix("oracle") {
            Some("") => "",
            Some(rest) => rest.strip_prefix(':').ok_or_else(|| bad_backend(s))?,
            None => return Err(bad_backend(s)),
        };
        let mut eps = BTreeMap::new();
        let mut seed = None;
        for kv in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("oracle parameter {kv:?} is not key=value")))?;
            let k = k.trim();
            let num = |v: &str| -> Result<f64> {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("oracle parameter {k}: {v:?} is not a number")))
            };
            match k {
                "eps" => {
                    let e = num(v)?;
                    for a in Axis::ALL {
                        eps.insert(a, e);
                    }
                }
                "seed" => {
                    seed = Some(v.trim().parse::<u64>().map_err(|_| {
                        Error::Config(format!("oracle seed {v:?} is not an unsigned integer"))
                    })?)
                }
                other => {
                    let axis: Axis = other
                        .parse()
                        .map_err(|_| Error::Config(format!("unknown oracle parameter {other:?}")))?;
                    eps.insert(axis, num(v)?);
                }
            }
        }
        let spec = BackendSpec::Oracle { eps, seed };
        spec.validate()?;
        Ok(spec)
    }
}

fn bad_backend(s: &str) -> Error {
    Error::Config(format!(
        "unknown backend {s:?}; expected oracle[:eps=E,...], uniform or exec:<command>"
    ))
}

impl std::fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendSpec::Uniform => f.write_str("uniform"),
            BackendSpec::Exec(cmd) => write!(f, "exec:{cmd}"),
            BackendSpec::Oracle { eps, seed } => {
                let mut parts: Vec<String> = eps.iter().map(|(a, e)| format!("{a}={e}")).collect();
                if let Some(s) = seed {
                    parts.push(format!("seed={s}"));
                }
                if parts.is_empty() {
                    f.write_str("oracle")
                } else {
                    write!(f, "oracle:{}", parts.join(","))
                }
            }
        }
    }
}

impl Serialize for BackendSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BackendSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl BackendSpec {
    pub fn validate(&self) -> Result<()> {
        if let BackendSpec::Oracle { eps, .. } = self {
            NoiseConfig {
                epsilon: eps.clone(),
                base_seed: 0,
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn needs_labels(&self) -> bool {
        matches!(self, BackendSpec::Oracle { .. })
    }
}

/// Parses `lo:hi` in HU.
pub fn parse_window(s: &str) -> Result<(f32, f32)> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("window {s:?} is not lo:hi")))?;
    let num = |v: &str| {
        v.trim()
            .parse::<f32>()
            .map_err(|_| Error::Config(format!("window bound {v:?} is not a number")))
    };
    let (lo, hi) = (num(lo)?, num(hi)?);
    if !(lo < hi) {
        return Err(Error::InvalidWindow { lo, hi });
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    #[default]
    Stl,
    Obj,
}

impl MeshFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MeshFormat::Stl => "stl",
            MeshFormat::Obj => "obj",
        }
    }
}

fn default_window() -> (f32, f32) {
    DEFAULT_WINDOW
}

fn default_axes() -> Vec<Axis> {
    Axis::ALL.to_vec()
}

/// Everything `infer` and `pipeline` need. Defaults are window -200..500 HU,
/// all three axes, a 256 / 32 / 32 slice size policy and a noise-free oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// DICOM directory or RVOL scan.
    pub input: Option<PathBuf>,
    /// Ground-truth labels: served by the oracle and used for evaluation.
    pub gt: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_window")]
    pub window: (f32, f32),
    #[serde(default = "default_axes")]
    pub axes: Vec<Axis>,
    pub backend: BackendSpec,
    /// Defaults to the ground truth's class map, else the cardiac map.
    pub classes: Option<ClassMap>,
    pub policy: SliceSizePolicy,
    pub seed: u64,
    pub per_axis: bool,
    pub mesh_format: MeshFormat,
    /// Skip mesh export in `pipeline`.
    pub no_mesh: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: None,
            gt: None,
            output_dir: None,
            window: default_window(),
            axes: default_axes(),
            backend: BackendSpec::default(),
            classes: None,
            policy: SliceSizePolicy::default(),
            seed: 0,
            per_axis: false,
            mesh_format: MeshFormat::default(),
            no_mesh: false,
        }
    }
}

/// Flag values that override the config file when given.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigFlags {
    /// JSON configuration file; flags given here take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Noise seed for the oracle backend.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated axes, e.g. axial,coronal,sagittal.
    #[arg(long)]
    pub axes: Option<String>,
    /// oracle[:eps=E,seed=S,axial=E,...] | uniform | exec:<command>
    #[arg(long, allow_hyphen_values = true)]
    pub backend: Option<String>,
    /// HU window as lo:hi, e.g. -200:500.
    #[arg(long, allow_hyphen_values = true)]
    pub window: Option<String>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
    }

    /// Loads the file named by `--config` (if any) and applies flag overrides.
    pub fn from_flags(flags: &ConfigFlags) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        if let Some(a) = &flags.axes {
            cfg.axes = parse_axes(a)?;
        }
        if let Some(b) = &flags.backend {
            cfg.backend = b.parse()?;
        }
        if let Some(w) = &flags.window {
            cfg.window = parse_window(w)?;
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked before touching the data.
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.window;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidWindow { lo, hi });
        }
        if self.axes.is_empty() {
            return Err(Error::Config("no axes selected".to_string()));
        }
        for (i, a) in self.axes.iter().enumerate() {
            if self.axes[..i].contains(a) {
                return Err(Error::Config(format!("axis {a} listed twice")));
            }
        }
        self.policy.validate()?;
        self.backend.validate()?;
        if self.backend.needs_labels() && self.gt.is_none() {
            return Err(Error::Config(
                "the oracle backend needs ground-truth labels (--gt)".to_string(),
            ));
        }
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Config("no input given".to_string()))?;
        require_exists(input)?;
        if let Some(gt) = &self.gt {
            require_exists(gt)?;
        }
        Ok(())
    }

    pub fn noise(&self) -> NoiseConfig {
        match &self.backend {
            BackendSpec::Oracle { eps, seed } => NoiseConfig {
                epsilon: eps.clone(),
                base_seed: seed.unwrap_or(self.seed),
            },
            _ => NoiseConfig::default(),
        }
    }

    /// The class map in force: explicit config, else the ground truth's.
    pub fn resolve_classes(&self, gt: Option<&LabelVolume>) -> Result<ClassMap> {
        match (&self.classes, gt) {
            (Some(c), Some(g)) if c != g.classes() => Err(Error::ClassMismatch(
                "configured class map differs from the ground truth's".to_string(),
            )),
            (Some(c), _) => Ok(c.clone()),
            (None, Some(g)) => Ok(g.classes().clone()),
            (None, None) => Ok(ClassMap::cardiac()),
        }
    }
}

pub fn require_exists(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist", p.display())))
    }
}

/// Builds the per-axis segmenter factory for a backend.
pub fn segmenter_factory(
    backend: &BackendSpec,
    noise: NoiseConfig,
    classes: ClassMap,
    gt: Option<Arc<LabelVolume>>,
) -> Result<Box<SegmenterFactory<'static>>> {
    Ok(match backend.clone() {
        BackendSpec::Oracle { .. } => {
            let gt = gt.ok_or_else(|| {
                Error::Config("the oracle backend needs ground-truth labels".to_string())
            })?;
            Box::new(move |axis| {
                Ok(Box::new(OracleSegmenter::new(gt.clone(), axis, &noise)?) as Box<dyn SliceSegmenter>)
            })
        }
        BackendSpec::Uniform => Box::new(move |_| {
            Ok(Box::new(UniformSegmenter::new(classes.clone())) as Box<dyn SliceSegmenter>)
        }),
        BackendSpec::Exec(cmd) => Box::new(move |axis| {
            Ok(Box::new(ExternalSegmenter::spawn(&cmd, axis, classes.clone())?) as Box<dyn SliceSegmenter>)
        }),
    })
}
