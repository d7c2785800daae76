//! Test-only DICOM Part 10 writer for synthetic CT series.
//!
//! Written independently of the reader so the two check each other.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy)]
pub enum Syntax {
    ExplicitLe,
    ImplicitLe,
    /// Any other transfer syntax UID; the dataset is still written explicit LE.
    Other(&'static str),
}

impl Syntax {
    fn uid(self) -> &'static str {
        match self {
            Syntax::ExplicitLe => "1.2.840.10008.1.2.1",
            Syntax::ImplicitLe => "1.2.840.10008.1.2",
            Syntax::Other(uid) => uid,
        }
    }

    fn explicit(self) -> bool {
        !matches!(self, Syntax::ImplicitLe)
    }
}

#[derive(Debug, Clone)]
pub struct SliceSpec {
    pub rows: u16,
    pub columns: u16,
    pub slope: f64,
    pub intercept: f64,
    pub pixel_spacing: (f64, f64),
    pub position: Option<[f64; 3]>,
    pub instance: Option<i64>,
    pub thickness: Option<f64>,
    pub pixels: Vec<i16>,
    pub syntax: Syntax,
    /// Adds an undefined-length sequence ahead of the image tags.
    pub with_sequence: bool,
}

fn pad(mut v: Vec<u8>, fill: u8) -> Vec<u8> {
    if v.len() % 2 == 1 {
        v.push(fill);
    }
    v
}

fn element(out: &mut Vec<u8>, explicit: bool, group: u16, elem: u16, vr: &[u8; 2], value: &[u8]) {
    out.extend_from_slice(&group.to_le_bytes());
    out.extend_from_slice(&elem.to_le_bytes());
    if explicit {
        out.extend_from_slice(vr);
        if matches!(vr, b"OB" | b"OW" | b"SQ" | b"UN" | b"UT") {
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&(value.len() as u32).to_le_bytes());
        } else {
            out.extend_from_slice(&(value.len() as u16).to_le_bytes());
        }
    } else {
        out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    }
    out.extend_from_slice(value);
}

fn text(out: &mut Vec<u8>, explicit: bool, group: u16, elem: u16, vr: &[u8; 2], s: &str) {
    let fill = if vr == b"UI" { 0 } else { b' ' };
    element(out, explicit, group, elem, vr, &pad(s.as_bytes().to_vec(), fill));
}

fn us(out: &mut Vec<u8>, explicit: bool, group: u16, elem: u16, v: u16) {
    element(out, explicit, group, elem, b"US", &v.to_le_bytes());
}

fn undefined_sequence(out: &mut Vec<u8>, explicit: bool) {
    // (0008,1140) ReferencedImageSequence, one undefined-length item
    out.extend_from_slice(&0x0008u16.to_le_bytes());
    out.extend_from_slice(&0x1140u16.to_le_bytes());
    if explicit {
        out.extend_from_slice(b"SQ\0\0");
    }
    out.extend_from_slice(&0xFFFF_FFFFu32.to_le_bytes());
    out.extend_from_slice(&[0xFE, 0xFF, 0x00, 0xE0]);
    out.extend_from_slice(&0xFFFF_FFFFu32.to_le_bytes());
    text(out, explicit, 0x0008, 0x1150, b"UI", "1.2.840.10008.5.1.4.1.1.2");
    out.extend_from_slice(&[0xFE, 0xFF, 0x0D, 0xE0, 0, 0, 0, 0]);
    // a second, defined-length item
    let mut item = Vec::new();
    text(&mut item, explicit, 0x0008, 0x1155, b"UI", "1.2.3.4");
    out.extend_from_slice(&[0xFE, 0xFF, 0x00, 0xE0]);
    out.extend_from_slice(&(item.len() as u32).to_le_bytes());
    out.extend_from_slice(&item);
    out.extend_from_slice(&[0xFE, 0xFF, 0xDD, 0xE0, 0, 0, 0, 0]);
}

pub fn encode(spec: &SliceSpec) -> Vec<u8> {
    let mut meta = Vec::new();
    element(&mut meta, true, 0x0002, 0x0001, b"OB", &[0, 1]);
    text(&mut meta, true, 0x0002, 0x0002, b"UI", "1.2.840.10008.5.1.4.1.1.2");
    text(&mut meta, true, 0x0002, 0x0010, b"UI", spec.syntax.uid());

    let mut out = vec![0u8; 128];
    out.extend_from_slice(b"DICM");
    element(&mut out, true, 0x0002, 0x0000, b"UL", &(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);

    let ex = spec.syntax.explicit();
    text(&mut out, ex, 0x0008, 0x0060, b"CS", "CT");
    if spec.with_sequence {
        undefined_sequence(&mut out, ex);
    }
    if let Some(t) = spec.thickness {
        text(&mut out, ex, 0x0018, 0x0050, b"DS", &format!("{t}"));
    }
    text(&mut out, ex, 0x0020, 0x000E, b"UI", "1.2.826.0.1.3680043.2.1125.1");
    if let Some(i) = spec.instance {
        text(&mut out, ex, 0x0020, 0x0013, b"IS", &format!("{i}"));
    }
    if let Some([x, y, z]) = spec.position {
        text(&mut out, ex, 0x0020, 0x0032, b"DS", &format!("{x}\\{y}\\{z}"));
    }
    us(&mut out, ex, 0x0028, 0x0002, 1);
    us(&mut out, ex, 0x0028, 0x0010, spec.rows);
    us(&mut out, ex, 0x0028, 0x0011, spec.columns);
    let (r, c) = spec.pixel_spacing;
    text(&mut out, ex, 0x0028, 0x0030, b"DS", &format!("{r}\\{c}"));
    us(&mut out, ex, 0x0028, 0x0100, 16);
    us(&mut out, ex, 0x0028, 0x0101, 16);
    us(&mut out, ex, 0x0028, 0x0103, 1);
    text(&mut out, ex, 0x0028, 0x1052, b"DS", &format!("{}", spec.intercept));
    text(&mut out, ex, 0x0028, 0x1053, b"DS", &format!("{}", spec.slope));
    let pixels: Vec<u8> = spec.pixels.iter().flat_map(|p| p.to_le_bytes()).collect();
    element(&mut out, ex, 0x7FE0, 0x0010, b"OW", &pixels);
    out
}

/// Writes one file per slice, named `slice_NNN.dcm` in the given order.
pub fn write_series(dir: &Path, slices: &[SliceSpec]) -> Vec<PathBuf> {
    slices
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let path = dir.join(format!("slice_{i:03}.dcm"));
            std::fs::write(&path, encode(s)).unwrap();
            path
        })
        .collect()
}
