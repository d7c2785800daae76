#[path = "common/dicom_writer.rs"]
mod dicom_writer;

use std::path::Path;
use std::process::{Command, Output};

use axiseg::io::{read_labels, read_scalar};
use axiseg::mesh::STL_HEADER_PREFIX;

fn axiseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_axiseg")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn phantom(dir: &Path) {
    let out = axiseg(&["phantom", "--preset", "four-chamber", "--dims", "64", "--seed", "1", "--out-dir", s(dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn phantom_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    phantom(&a);
    phantom(&b);
    for f in ["scan.rvol", "labels.rvol", "spec.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    // the written spec regenerates the same volumes
    let c = tmp.path().join("c");
    let out = axiseg(&["phantom", "--spec", s(&a.join("spec.json")), "--out-dir", s(&c)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read(a.join("labels.rvol")).unwrap(), std::fs::read(c.join("labels.rvol")).unwrap());
}

#[test]
fn pipeline_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    phantom(&ph);
    let out_dir = tmp.path().join("out");
    let out = axiseg(&[
        "pipeline",
        "--input", s(&ph.join("scan.rvol")),
        "--gt", s(&ph.join("labels.rvol")),
        "--out-dir", s(&out_dir),
        "--backend", "oracle:eps=0",
        "--per-axis",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let pred = read_labels(&out_dir.join("prediction.rvol")).unwrap();
    assert_eq!(pred, read_labels(&ph.join("labels.rvol")).unwrap());
    for axis in ["axial", "coronal", "sagittal"] {
        assert!(out_dir.join(format!("prediction_{axis}.rvol")).exists());
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["ensemble"]["mean_iou"], 1.0);
    assert_eq!(report["axes"].as_object().unwrap().len(), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("Full Heart"));
    for name in ["right_atrium", "right_ventricle", "left_atrium", "left_ventricle"] {
        let stl = std::fs::read(out_dir.join("meshes").join(format!("{name}.stl"))).unwrap();
        assert!(stl.starts_with(STL_HEADER_PREFIX));
        let n = u32::from_le_bytes(stl[80..84].try_into().unwrap()) as usize;
        assert!(n > 0);
        assert_eq!(stl.len(), 84 + 50 * n);
    }
}

#[test]
fn infer_eval_mesh_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    phantom(&ph);
    let pred = tmp.path().join("pred.rvol");
    let out = axiseg(&[
        "infer",
        "--input", s(&ph.join("scan.rvol")),
        "--gt", s(&ph.join("labels.rvol")),
        "--output", s(&pred),
        "--axes", "axial,sagittal",
        "--backend", "oracle:eps=0.1,seed=3",
        "--window", "-200:500",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let json = tmp.path().join("eval.json");
    let out = axiseg(&["eval", "--pred", s(&pred), "--gt", s(&ph.join("labels.rvol")), "--json", s(&json)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    let m = report["mean_iou"].as_f64().unwrap();
    assert!(m > 0.3 && m < 1.0, "{m}");

    let meshes = tmp.path().join("meshes");
    let out = axiseg(&["mesh", "--labels", s(&pred), "--classes", "left_ventricle", "--format", "obj", "--out-dir", s(&meshes)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let obj = std::fs::read_to_string(meshes.join("left_ventricle.obj")).unwrap();
    assert!(obj.lines().any(|l| l.starts_with("v ")) && obj.lines().any(|l| l.starts_with("f ")));
}

#[test]
fn slices_export_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    phantom(&ph);
    let out_dir = tmp.path().join("slices");
    let out = axiseg(&[
        "slices",
        "--volume", s(&ph.join("scan.rvol")),
        "--labels", s(&ph.join("labels.rvol")),
        "--axes", "coronal",
        "--out-dir", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let pngs = std::fs::read_dir(&out_dir).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")
    });
    assert_eq!(pngs.count(), 128);
}

#[test]
fn convert_dicom_series() {
    let tmp = tempfile::tempdir().unwrap();
    let series = tmp.path().join("series");
    std::fs::create_dir(&series).unwrap();
    let slices: Vec<_> = (0..3)
        .map(|z| dicom_writer::SliceSpec {
            rows: 2,
            columns: 3,
            slope: 2.0,
            intercept: -1000.0,
            pixel_spacing: (0.5, 0.4),
            position: Some([0.0, 0.0, 3.0 * z as f64]),
            instance: Some(z + 1),
            thickness: None,
            pixels: vec![500 + z as i16; 6],
            syntax: dicom_writer::Syntax::ExplicitLe,
            with_sequence: false,
        })
        .collect();
    dicom_writer::write_series(&series, &slices);
    let rvol = tmp.path().join("ct.rvol");
    let out = axiseg(&["convert", "--input", s(&series), "--output", s(&rvol)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = read_scalar(&rvol).unwrap();
    assert_eq!(v.spacing().as_array(), [0.4, 0.5, 3.0]);
    assert_eq!(v.get(0, 0, 2), 2.0 * 502.0 - 1000.0);

    // a compressed slice is an input-format failure
    let mut bad = slices[1].clone();
    bad.syntax = dicom_writer::Syntax::Other("1.2.840.10008.1.2.4.90");
    std::fs::write(series.join("slice_001.dcm"), dicom_writer::encode(&bad)).unwrap();
    let out = axiseg(&["convert", "--input", s(&series), "--output", s(&rvol)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("slice_001.dcm"));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.rvol");
    let pred = tmp.path().join("p.rvol");
    let cases: Vec<Vec<&str>> = vec![
        vec!["frobnicate"],
        vec!["infer", "--output", s(&pred)],
        vec!["infer", "--input", s(&missing), "--output", s(&pred), "--backend", "uniform"],
        vec!["infer", "--input", s(&missing), "--output", s(&pred), "--backend", "bogus"],
        vec!["infer", "--input", s(&missing), "--output", s(&pred), "--window", "500:-200"],
        vec!["infer", "--input", s(&missing), "--output", s(&pred), "--axes", "axial,axial"],
        vec!["phantom", "--out-dir", s(tmp.path())],
        vec!["convert", "--input", s(tmp.path()), "--output", s(&pred)],
    ];
    for args in cases {
        let out = axiseg(&args);
        assert_eq!(code(&out), 2, "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn oracle_without_ground_truth_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    phantom(&ph);
    let out = axiseg(&["pipeline", "--input", s(&ph.join("scan.rvol")), "--out-dir", s(tmp.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--gt"));
}

#[test]
fn unreadable_input_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let junk = tmp.path().join("junk.rvol");
    std::fs::write(&junk, b"not a volume").unwrap();
    let out = axiseg(&["eval", "--pred", s(&junk), "--gt", s(&junk)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn config_file_supplies_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    phantom(&ph);
    let cfg = tmp.path().join("run.json");
    let body = serde_json::json!({
        "input": ph.join("scan.rvol"),
        "gt": ph.join("labels.rvol"),
        "backend": "oracle:eps=0",
        "axes": ["coronal"],
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let pred = tmp.path().join("pred.rvol");
    let out = axiseg(&["infer", "--config", s(&cfg), "--output", s(&pred)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read_labels(&pred).unwrap(), read_labels(&ph.join("labels.rvol")).unwrap());

    std::fs::write(&cfg, r#"{"unknown_key": 1}"#).unwrap();
    let out = axiseg(&["infer", "--config", s(&cfg), "--output", s(&pred)]);
    assert_eq!(code(&out), 2);
}
