use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use serde::Serialize;

use super::config::{require_exists, segmenter_factory, PipelineConfig};
use super::{
    Command, ConvertArgs, EvalArgs, InferArgs, MeshArgs, MeshFormat, PhantomArgs, PipelineArgs,
    Preset, SlicesArgs,
};
use crate::ensemble::{run_pipeline, PipelineOptions, PipelineOutput};
use crate::error::{Error, Result};
use crate::io::{read_dicom_series, read_labels, read_scalar, write_labels, write_scalar};
use crate::mesh::{check_watertight, class_mesh, write_obj, write_stl};
use crate::metrics::{format_table, EvalReport};
use crate::phantom::{four_chamber_preset, generate, PhantomSpec};
use crate::slicer::{export_training_slices, parse_axes, SliceSizePolicy};
use crate::volume::{window_normalize, ClassMap, Dims, LabelVolume, ScalarVolume};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Convert(a) => cmd_convert(&a),
        Command::Phantom(a) => cmd_phantom(&a),
        Command::Slices(a) => cmd_slices(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Mesh(a) => cmd_mesh(&a),
        Command::Pipeline(a) => cmd_pipeline(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// A DICOM directory or an RVOL scan.
pub fn load_scan(path: &Path) -> Result<ScalarVolume> {
    require_exists(path)?;
    if path.is_dir() {
        let series = read_dicom_series(path)?;
        for w in &series.warnings {
            eprintln!("axiseg: warning: {w}");
        }
        Ok(series.volume)
    } else {
        read_scalar(path)
    }
}

fn load_labels(path: &Path) -> Result<LabelVolume> {
    require_exists(path)?;
    read_labels(path)
}

fn cmd_convert(a: &ConvertArgs) -> Result<()> {
    require_exists(&a.input)?;
    let series = read_dicom_series(&a.input)?;
    for w in &series.warnings {
        eprintln!("axiseg: warning: {w}");
    }
    write_scalar(&a.output, &series.volume)?;
    let s = series.volume.spacing();
    println!(
        "wrote {} ({} voxels, spacing {} x {} x {} mm)",
        a.output.display(),
        series.volume.dims(),
        s.sx(),
        s.sy(),
        s.sz()
    );
    Ok(())
}

/// `64` for a cube or `nx,ny,nz`.
pub fn parse_dims(s: &str) -> Result<Dims> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("dims {s:?}: {p:?} is not a size")))
        })
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [n] => Ok(Dims::cube(*n)),
        [x, y, z] => Ok(Dims::new(*x, *y, *z)),
        _ => Err(Error::Config(format!("dims {s:?}: expected N or NX,NY,NZ"))),
    }
}

fn cmd_phantom(a: &PhantomArgs) -> Result<()> {
    let spec = match (&a.spec, a.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<PhantomSpec>(&text)
                .map_err(|e| Error::InvalidPhantom(format!("{}: {e}", path.display())))?
        }
        (None, Some(Preset::FourChamber)) => four_chamber_preset(parse_dims(&a.dims)?, a.seed)?,
        (None, None) => {
            return Err(Error::Config("give either --spec or --preset".to_string()));
        }
    };
    spec.validate()?;
    let (scan, labels) = generate(&spec)?;
    create_dir(&a.out_dir)?;
    write_scalar(&a.out_dir.join("scan.rvol"), &scan)?;
    write_labels(&a.out_dir.join("labels.rvol"), &labels)?;
    let json = serde_json::to_string_pretty(&spec).expect("spec serializes");
    write_text(&a.out_dir.join("spec.json"), &(json + "\n"))?;
    println!("wrote {} phantom to {}", spec.dims, a.out_dir.display());
    Ok(())
}

fn cmd_slices(a: &SlicesArgs) -> Result<()> {
    let axes = parse_axes(&a.axes)?;
    let (lo, hi) = super::config::parse_window(&a.window)?;
    let scan = load_scan(&a.volume)?;
    let labels = load_labels(&a.labels)?;
    let normalized = window_normalize(&scan, lo, hi)?;
    let entries = export_training_slices(&normalized, &labels, &axes, &SliceSizePolicy::default(), &a.out_dir)?;
    println!("wrote {} image/mask pairs to {}", entries.len(), a.out_dir.display());
    Ok(())
}

/// Everything loaded and checked, ready to run.
struct Prepared {
    cfg: PipelineConfig,
    scan: ScalarVolume,
    gt: Option<Arc<LabelVolume>>,
    classes: ClassMap,
}

fn prepare(cfg: PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let gt = cfg.gt.as_deref().map(load_labels).transpose()?.map(Arc::new);
    let classes = cfg.resolve_classes(gt.as_deref())?;
    let scan = load_scan(cfg.input.as_deref().expect("validated"))?;
    if let Some(g) = &gt {
        if g.dims() != scan.dims() {
            return Err(Error::DimsMismatch(format!(
                "scan {} vs ground truth {}",
                scan.dims(),
                g.dims()
            )));
        }
    }
    Ok(Prepared { cfg, scan, gt, classes })
}

fn execute(p: &Prepared) -> Result<PipelineOutput> {
    let mut factory = segmenter_factory(&p.cfg.backend, p.cfg.noise(), p.classes.clone(), p.gt.clone())?;
    let options = PipelineOptions {
        window: p.cfg.window,
        policy: p.cfg.policy,
        ..PipelineOptions::default()
    };
    info!("running {} on {} axes", p.cfg.backend, p.cfg.axes.len());
    run_pipeline(&p.scan, &p.cfg.axes, &p.classes, &mut *factory, &options)
}

/// `pred.rvol` -> `pred_axial.rvol`.
pub fn axis_output_path(output: &Path, axis: crate::slicer::Axis) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("prediction");
    let name = match output.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{axis}.{ext}"),
        None => format!("{stem}_{axis}"),
    };
    output.with_file_name(name)
}

fn write_predictions(out: &PipelineOutput, output: &Path, per_axis: bool) -> Result<()> {
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_labels(output, &out.labels)?;
    println!("wrote {}", output.display());
    if per_axis {
        for (axis, labels) in &out.axis_labels {
            let path = axis_output_path(output, *axis);
            write_labels(&path, labels)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let mut cfg = PipelineConfig::from_flags(&a.flags)?;
    cfg.input = a.input.clone().or(cfg.input);
    cfg.gt = a.gt.clone().or(cfg.gt);
    cfg.per_axis |= a.per_axis;
    let prepared = prepare(cfg)?;
    let out = execute(&prepared)?;
    write_predictions(&out, &a.output, prepared.cfg.per_axis)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let pred = load_labels(&a.pred)?;
    let gt = load_labels(&a.gt)?;
    let report = EvalReport::evaluate(&pred, &gt)?;
    print!("{}", format_table(&[("prediction", &report)]));
    if let Some(path) = &a.json {
        write_text(path, &(report.to_json() + "\n"))?;
    }
    Ok(())
}

fn parse_classes(spec: Option<&str>, classes: &ClassMap) -> Result<Vec<usize>> {
    let Some(spec) = spec else {
        return Ok(classes.foreground().collect());
    };
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            classes
                .index_of(s)
                .or_else(|| s.parse::<usize>().ok().filter(|&i| i < classes.count()))
                .ok_or_else(|| Error::Config(format!("unknown class {s:?}")))
        })
        .collect()
}

/// Writes one mesh per class; returns the paths written.
pub fn export_meshes(
    labels: &LabelVolume,
    classes: &[usize],
    format: MeshFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let mut written = Vec::new();
    for &c in classes {
        let name = labels.classes().name(c);
        let mesh = class_mesh(labels, c)?;
        check_watertight(&mesh)?;
        if mesh.is_empty() {
            warn!("class {name} is absent; writing an empty mesh");
            eprintln!("axiseg: warning: class {name} is absent; its mesh is empty");
        }
        let path = out_dir.join(format!("{name}.{}", format.extension()));
        match format {
            MeshFormat::Stl => write_stl(&mesh, &path)?,
            MeshFormat::Obj => write_obj(&mesh, &path)?,
        }
        println!("wrote {} ({} triangles)", path.display(), mesh.triangles.len());
        written.push(path);
    }
    Ok(written)
}

fn cmd_mesh(a: &MeshArgs) -> Result<()> {
    let labels = load_labels(&a.labels)?;
    let classes = parse_classes(a.classes.as_deref(), labels.classes())?;
    export_meshes(&labels, &classes, a.format, &a.out_dir)?;
    Ok(())
}

#[derive(Serialize)]
struct PipelineReport<'a> {
    ensemble: &'a EvalReport,
    axes: BTreeMap<String, &'a EvalReport>,
}

fn cmd_pipeline(a: &PipelineArgs) -> Result<()> {
    let mut cfg = PipelineConfig::from_flags(&a.flags)?;
    cfg.input = a.input.clone().or(cfg.input);
    cfg.gt = a.gt.clone().or(cfg.gt);
    cfg.output_dir = a.out_dir.clone().or(cfg.output_dir);
    cfg.per_axis |= a.per_axis;
    cfg.no_mesh |= a.no_mesh;
    if let Some(f) = a.format {
        cfg.mesh_format = f;
    }
    let out_dir = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory given (--out-dir)".to_string()))?;
    let prepared = prepare(cfg)?;
    let out = execute(&prepared)?;
    let cfg = &prepared.cfg;
    create_dir(&out_dir)?;
    write_predictions(&out, &out_dir.join("prediction.rvol"), cfg.per_axis)?;

    match &prepared.gt {
        Some(gt) => {
            let ensemble = EvalReport::evaluate(&out.labels, gt)?;
            let axis_reports: Vec<(String, EvalReport)> = out
                .axis_labels
                .iter()
                .map(|(axis, l)| Ok((axis.to_string(), EvalReport::evaluate(l, gt)?)))
                .collect::<Result<_>>()?;
            let mut rows: Vec<(&str, &EvalReport)> =
                axis_reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
            rows.push(("ensemble", &ensemble));
            let table = format_table(&rows);
            print!("{table}");
            write_text(&out_dir.join("report.txt"), &table)?;
            let report = PipelineReport {
                ensemble: &ensemble,
                axes: axis_reports.iter().map(|(n, r)| (n.clone(), r)).collect(),
            };
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_text(&out_dir.join("report.json"), &(json + "\n"))?;
        }
        None => info!("no ground truth given; skipping evaluation"),
    }

    if !cfg.no_mesh {
        let classes: Vec<usize> = prepared.classes.foreground().collect();
        export_meshes(&out.labels, &classes, cfg.mesh_format, &out_dir.join("meshes"))?;
    }
    Ok(())
}
