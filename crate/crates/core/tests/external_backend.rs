use std::sync::Arc;

use axiseg::error::Error;
use axiseg::io::write_labels;
use axiseg::segmenter::{
    segment_checked, ExternalSegmenter, NoiseConfig, OracleSegmenter, SliceInput, SliceSegmenter,
};
use axiseg::volume::Grid2;
use axiseg::{Axis, ClassMap, Dims, LabelVolume, Spacing};

fn backend(args: &str) -> String {
    format!("{} {args}", env!("CARGO_BIN_EXE_axiseg-backend"))
}

fn image(h: usize, w: usize) -> Grid2<f32> {
    Grid2::filled(h, w, 0.5).unwrap()
}

#[test]
fn uniform_backend_answers_each_request() {
    let mut seg = ExternalSegmenter::spawn(&backend("uniform"), Axis::Axial, ClassMap::cardiac()).unwrap();
    for index in 0..3 {
        let img = image(4, 6);
        let p = segment_checked(&mut seg, SliceInput { index, image: &img }).unwrap();
        assert_eq!((p.channels(), p.h(), p.w()), (5, 4, 6));
        assert!(p.data().iter().all(|&v| (v - 0.2).abs() < 1e-6));
    }
}

#[test]
fn oracle_backend_matches_in_process_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims::new(6, 5, 4);
    let labels = (0..dims.len()).map(|i| (i * 7 % 5) as u8).collect();
    let gt = Arc::new(LabelVolume::new(dims, Spacing::unit(), ClassMap::cardiac(), labels).unwrap());
    let path = dir.path().join("gt.rvol");
    write_labels(&path, &gt).unwrap();

    let noise = NoiseConfig::uniform(0.3, 4);
    let cmd = backend(&format!("oracle --labels {} --eps 0.3 --seed 4", path.display()));
    // --axis omitted: the backend falls back to the environment variable
    let mut remote = ExternalSegmenter::spawn(&cmd, Axis::Coronal, ClassMap::cardiac()).unwrap();
    let mut local = OracleSegmenter::new(gt.clone(), Axis::Coronal, &noise).unwrap();
    for index in 0..5 {
        let img = image(32, 32);
        let input = SliceInput { index, image: &img };
        let a = local.segment(input).unwrap();
        let b = remote.segment(input).unwrap();
        assert_eq!(a, b, "slice {index}");
    }
}

#[test]
fn class_count_refusal_is_a_protocol_error() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims::cube(2);
    let gt = LabelVolume::background(dims, Spacing::unit(), ClassMap::cardiac()).unwrap();
    let path = dir.path().join("gt.rvol");
    write_labels(&path, &gt).unwrap();
    let two = ClassMap::new(vec!["bg".into(), "fg".into()], 0).unwrap();
    let cmd = backend(&format!("oracle --labels {} --axis axial", path.display()));
    match ExternalSegmenter::spawn(&cmd, Axis::Axial, two) {
        Err(Error::Protocol { message, .. }) => assert!(message.contains("classes"), "{message}"),
        other => panic!("{:?}", other.err()),
    }
}

fn first_failure(fault: &str) -> Error {
    let cmd = backend(&format!("uniform --fault {fault}"));
    let mut seg = match ExternalSegmenter::spawn(&cmd, Axis::Sagittal, ClassMap::cardiac()) {
        Ok(s) => s,
        Err(e) => return e,
    };
    let img = image(3, 3);
    for index in 0..4 {
        if let Err(e) = segment_checked(&mut seg, SliceInput { index, image: &img }) {
            return e;
        }
    }
    panic!("fault {fault} went unnoticed");
}

#[test]
fn faults_map_to_backend_exit_code() {
    for fault in ["handshake", "wrong-id", "short-read", "crash", "bad-probs"] {
        let e = first_failure(fault);
        assert_eq!(axiseg::cli::exit_code(&e), 4, "{fault}: {e}");
    }
}

#[test]
fn crash_carries_backend_stderr() {
    match first_failure("crash") {
        Error::Backend { stderr_tail, .. } => {
            assert!(stderr_tail.contains("crashing on request 0"), "{stderr_tail:?}")
        }
        other => panic!("{other}"),
    }
}

#[test]
fn wrong_id_is_a_protocol_error() {
    assert!(matches!(first_failure("wrong-id"), Error::Protocol { .. }));
    assert!(matches!(first_failure("handshake"), Error::Protocol { .. }));
    assert!(matches!(first_failure("short-read"), Error::Backend { .. }));
    assert!(matches!(first_failure("bad-probs"), Error::InvalidProbabilities(_)));
}

#[test]
fn missing_program_is_a_backend_error() {
    let e = ExternalSegmenter::spawn("/nonexistent/segmenter", Axis::Axial, ClassMap::cardiac())
        .err()
        .unwrap();
    assert_eq!(axiseg::cli::exit_code(&e), 4);
}
