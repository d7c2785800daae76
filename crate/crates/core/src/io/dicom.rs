//! Minimal DICOM series reader for CT stacks.
//!
//! Supports Part 10 files with uncompressed little-endian transfer syntaxes
//! (implicit and explicit VR), 16-bit single-frame grayscale pixel data.
//! Anything else is rejected with an error naming the offending file.

use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::volume::{Dims, Domain, ScalarVolume, Spacing, HU_MAX, HU_MIN};

const IMPLICIT_VR_LE: &str = "1.2.840.10008.1.2";
const EXPLICIT_VR_LE: &str = "1.2.840.10008.1.2.1";

type Tag = (u16, u16);

const TRANSFER_SYNTAX: Tag = (0x0002, 0x0010);
const SAMPLES_PER_PIXEL: Tag = (0x0028, 0x0002);
const NUMBER_OF_FRAMES: Tag = (0x0028, 0x0008);
const ROWS: Tag = (0x0028, 0x0010);
const COLUMNS: Tag = (0x0028, 0x0011);
const PIXEL_SPACING: Tag = (0x0028, 0x0030);
const BITS_ALLOCATED: Tag = (0x0028, 0x0100);
const PIXEL_REPRESENTATION: Tag = (0x0028, 0x0103);
const RESCALE_INTERCEPT: Tag = (0x0028, 0x1052);
const RESCALE_SLOPE: Tag = (0x0028, 0x1053);
const SLICE_THICKNESS: Tag = (0x0018, 0x0050);
const INSTANCE_NUMBER: Tag = (0x0020, 0x0013);
const IMAGE_POSITION: Tag = (0x0020, 0x0032);
const SERIES_UID: Tag = (0x0020, 0x000E);
const PIXEL_DATA: Tag = (0x7FE0, 0x0010);

const ITEM: Tag = (0xFFFE, 0xE000);
const ITEM_DELIMITER: Tag = (0xFFFE, 0xE00D);
const SEQUENCE_DELIMITER: Tag = (0xFFFE, 0xE0DD);
const UNDEFINED: u32 = 0xFFFF_FFFF;

/// Geometry and encoding tags of one slice file.
#[derive(Debug, Clone, PartialEq)]
pub struct DicomSliceMeta {
    pub rows: usize,
    pub columns: usize,
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    /// (row spacing, column spacing) in mm.
    pub pixel_spacing: (f64, f64),
    pub image_position: Option<[f64; 3]>,
    pub instance_number: Option<i64>,
    pub slice_thickness: Option<f64>,
    pub bits_allocated: u16,
    pub pixel_signed: bool,
    pub series_uid: Option<String>,
}

#[derive(Debug)]
struct DicomSlice {
    path: PathBuf,
    meta: DicomSliceMeta,
    pixels: Vec<u8>,
}

/// A decoded series plus any non-fatal irregularities found on the way.
#[derive(Debug, Clone)]
pub struct DicomSeries {
    pub volume: ScalarVolume,
    pub metas: Vec<DicomSliceMeta>,
    pub warnings: Vec<String>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn malformed(&self, what: &str) -> Error {
        Error::MalformedSeries(format!("{}: {what} at byte {}", self.path.display(), self.pos))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.malformed("unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tag(&mut self) -> Result<Tag> {
        Ok((self.u16()?, self.u16()?))
    }
}

struct Element<'a> {
    tag: Tag,
    /// `None` for undefined-length elements, which have already been skipped.
    value: Option<&'a [u8]>,
}

fn has_long_length(vr: &[u8]) -> bool {
    matches!(
        vr,
        b"OB" | b"OD" | b"OF" | b"OL" | b"OV" | b"OW" | b"SQ" | b"SV" | b"UC" | b"UN" | b"UR"
            | b"UT" | b"UV"
    )
}

fn read_element<'a>(c: &mut Cursor<'a>, explicit: bool) -> Result<Element<'a>> {
    let tag = c.tag()?;
    if tag.0 == 0xFFFE {
        // Item and delimiter tags carry a bare 32-bit length in every syntax.
        let len = c.u32()?;
        return Ok(Element {
            tag,
            value: if len == UNDEFINED { None } else { Some(c.take(len as usize)?) },
        });
    }
    let len = if explicit {
        let vr = c.take(2)?;
        if has_long_length(vr) {
            c.take(2)?;
            c.u32()?
        } else {
            c.u16()? as u32
        }
    } else {
        c.u32()?
    };
    if len == UNDEFINED {
        if tag == PIXEL_DATA {
            return Err(c.malformed("encapsulated pixel data in an uncompressed syntax"));
        }
        skip_undefined_sequence(c, explicit)?;
        return Ok(Element { tag, value: None });
    }
    Ok(Element {
        tag,
        value: Some(c.take(len as usize)?),
    })
}

/// Skips a sequence of undefined length, including nested items.
fn skip_undefined_sequence(c: &mut Cursor<'_>, explicit: bool) -> Result<()> {
    loop {
        let tag = c.tag()?;
        let len = c.u32()?;
        match tag {
            SEQUENCE_DELIMITER => return Ok(()),
            ITEM if len == UNDEFINED => loop {
                let el = read_element(c, explicit)?;
                if el.tag == ITEM_DELIMITER {
                    break;
                }
            },
            ITEM => {
                c.take(len as usize)?;
            }
            _ => return Err(c.malformed("unexpected tag inside sequence")),
        }
    }
}

fn text(value: &[u8]) -> String {
    String::from_utf8_lossy(value)
        .trim_matches(|ch: char| ch == '\0' || ch.is_whitespace())
        .to_string()
}

fn decimals(value: &[u8], path: &Path, name: &str) -> Result<Vec<f64>> {
    text(value)
        .split('\\')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| {
                Error::MalformedSeries(format!("{}: bad {name} value '{s}'", path.display()))
            })
        })
        .collect()
}

fn us(value: &[u8], path: &Path, name: &str) -> Result<u16> {
    if value.len() < 2 {
        return Err(Error::MalformedSeries(format!("{}: short {name}", path.display())));
    }
    Ok(u16::from_le_bytes([value[0], value[1]]))
}

fn parse_slice(path: &Path, buf: &[u8]) -> Result<DicomSlice> {
    if buf.len() < 132 || &buf[128..132] != b"DICM" {
        return Err(Error::MalformedSeries(format!(
            "{}: not a DICOM Part 10 file",
            path.display()
        )));
    }
    let mut c = Cursor { buf, pos: 132, path };

    // File meta group is always explicit VR little endian.
    let mut syntax = None;
    while c.remaining() >= 4 && u16::from_le_bytes([buf[c.pos], buf[c.pos + 1]]) == 0x0002 {
        let el = read_element(&mut c, true)?;
        if el.tag == TRANSFER_SYNTAX {
            syntax = el.value.map(text);
        }
    }
    let syntax = syntax.ok_or_else(|| {
        Error::MalformedSeries(format!("{}: missing transfer syntax", path.display()))
    })?;
    let explicit = match syntax.as_str() {
        EXPLICIT_VR_LE => true,
        IMPLICIT_VR_LE => false,
        _ => {
            return Err(Error::UnsupportedSyntax {
                path: path.to_path_buf(),
                syntax,
            })
        }
    };

    let mut meta = DicomSliceMeta {
        rows: 0,
        columns: 0,
        rescale_slope: 1.0,
        rescale_intercept: 0.0,
        pixel_spacing: (0.0, 0.0),
        image_position: None,
        instance_number: None,
        slice_thickness: None,
        bits_allocated: 0,
        pixel_signed: false,
        series_uid: None,
    };
    let mut have = (false, false, false, false);
    let mut pixels = None;
    let mut frames = 1i64;
    let mut samples = 1u16;
    while c.remaining() > 0 {
        let el = read_element(&mut c, explicit)?;
        let Some(v) = el.value else { continue };
        match el.tag {
            ROWS => {
                meta.rows = us(v, path, "Rows")? as usize;
                have.0 = true;
            }
            COLUMNS => {
                meta.columns = us(v, path, "Columns")? as usize;
                have.1 = true;
            }
            BITS_ALLOCATED => {
                meta.bits_allocated = us(v, path, "BitsAllocated")?;
                have.2 = true;
            }
            PIXEL_REPRESENTATION => meta.pixel_signed = us(v, path, "PixelRepresentation")? == 1,
            SAMPLES_PER_PIXEL => samples = us(v, path, "SamplesPerPixel")?,
            NUMBER_OF_FRAMES => {
                frames = text(v).parse().map_err(|_| {
                    Error::MalformedSeries(format!("{}: bad NumberOfFrames", path.display()))
                })?
            }
            RESCALE_SLOPE => meta.rescale_slope = decimals(v, path, "RescaleSlope")?[0],
            RESCALE_INTERCEPT => {
                meta.rescale_intercept = decimals(v, path, "RescaleIntercept")?[0]
            }
            PIXEL_SPACING => {
                let s = decimals(v, path, "PixelSpacing")?;
                if s.len() != 2 {
                    return Err(Error::MalformedSeries(format!(
                        "{}: PixelSpacing needs 2 values",
                        path.display()
                    )));
                }
                meta.pixel_spacing = (s[0], s[1]);
                have.3 = true;
            }
            IMAGE_POSITION => {
                let p = decimals(v, path, "ImagePositionPatient")?;
                if p.len() != 3 {
                    return Err(Error::MalformedSeries(format!(
                        "{}: ImagePositionPatient needs 3 values",
                        path.display()
                    )));
                }
                meta.image_position = Some([p[0], p[1], p[2]]);
            }
            INSTANCE_NUMBER => meta.instance_number = text(v).parse().ok(),
            SLICE_THICKNESS => {
                meta.slice_thickness = decimals(v, path, "SliceThickness")?.first().copied()
            }
            SERIES_UID => meta.series_uid = Some(text(v)),
            PIXEL_DATA => {
                pixels = Some(v.to_vec());
                break;
            }
            _ => {}
        }
    }

    let missing: Vec<&str> = [
        (have.0, "Rows"),
        (have.1, "Columns"),
        (have.2, "BitsAllocated"),
        (have.3, "PixelSpacing"),
        (pixels.is_some(), "PixelData"),
    ]
    .iter()
    .filter(|(ok, _)| !ok)
    .map(|(_, name)| *name)
    .collect();
    if !missing.is_empty() {
        return Err(Error::MalformedSeries(format!(
            "{}: missing {}",
            path.display(),
            missing.join(", ")
        )));
    }
    if meta.rows == 0 || meta.columns == 0 {
        return Err(Error::MalformedSeries(format!("{}: empty image", path.display())));
    }
    if meta.bits_allocated != 16 {
        return Err(Error::MalformedSeries(format!(
            "{}: BitsAllocated {} (only 16 supported)",
            path.display(),
            meta.bits_allocated
        )));
    }
    if frames != 1 || samples != 1 {
        return Err(Error::MalformedSeries(format!(
            "{}: only single-frame grayscale images are supported",
            path.display()
        )));
    }
    let (ps_r, ps_c) = meta.pixel_spacing;
    if !(ps_r > 0.0 && ps_c > 0.0 && ps_r.is_finite() && ps_c.is_finite()) {
        return Err(Error::MalformedSeries(format!(
            "{}: non-positive PixelSpacing",
            path.display()
        )));
    }
    let pixels = pixels.expect("checked above");
    let need = meta.rows * meta.columns * 2;
    if pixels.len() < need {
        return Err(Error::MalformedSeries(format!(
            "{}: PixelData holds {} bytes, need {need}",
            path.display(),
            pixels.len()
        )));
    }
    Ok(DicomSlice {
        path: path.to_path_buf(),
        meta,
        pixels,
    })
}

/// Parses the tags of a single slice file.
pub fn read_slice_meta(path: &Path) -> Result<DicomSliceMeta> {
    let buf = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(parse_slice(path, &buf)?.meta)
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let path = entry.path();
        let hidden = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'));
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Reads every file in `dir` as one CT series and stacks the slices into a
/// Hounsfield volume.
///
/// Slices are ordered by the z of ImagePositionPatient (InstanceNumber when
/// positions are missing), so directory listing order does not matter. The
/// slice spacing is the median z gap; SliceThickness is the fallback when no
/// positions are available.
pub fn read_dicom_series(dir: &Path) -> Result<DicomSeries> {
    let files = list_files(dir)?;
    if files.is_empty() {
        return Err(Error::Config(format!("no files in {}", dir.display())));
    }
    if files.len() < 2 {
        return Err(Error::MalformedSeries(format!(
            "{}: a series needs at least 2 slices, found {}",
            dir.display(),
            files.len()
        )));
    }
    let mut slices = files
        .iter()
        .map(|p| {
            let buf = std::fs::read(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            parse_slice(p, &buf)
        })
        .collect::<Result<Vec<_>>>()?;

    let first = slices[0].meta.clone();
    let (rows, cols) = (first.rows, first.columns);
    for s in &slices[1..] {
        if s.meta.rows != rows || s.meta.columns != cols {
            return Err(Error::MalformedSeries(format!(
                "{}: {}x{} image differs from {}x{} in {}",
                s.path.display(),
                s.meta.rows,
                s.meta.columns,
                rows,
                cols,
                slices[0].path.display()
            )));
        }
        if s.meta.series_uid != first.series_uid {
            return Err(Error::MalformedSeries(format!(
                "{}: belongs to a different series",
                s.path.display()
            )));
        }
    }

    let mut warnings = Vec::new();
    let positioned = slices.iter().all(|s| s.meta.image_position.is_some());
    if positioned {
        slices.sort_by(|a, b| {
            let (za, zb) = (a.meta.image_position.unwrap()[2], b.meta.image_position.unwrap()[2]);
            za.total_cmp(&zb)
                .then(a.meta.instance_number.cmp(&b.meta.instance_number))
                .then(a.path.cmp(&b.path))
        });
    } else if slices.iter().all(|s| s.meta.instance_number.is_some()) {
        slices.sort_by(|a, b| {
            a.meta
                .instance_number
                .cmp(&b.meta.instance_number)
                .then(a.path.cmp(&b.path))
        });
    } else {
        return Err(Error::MalformedSeries(format!(
            "{}: slices lack both ImagePositionPatient and InstanceNumber",
            dir.display()
        )));
    }

    let mut sz = None;
    if positioned {
        let zs: Vec<f64> = slices
            .iter()
            .map(|s| s.meta.image_position.unwrap()[2])
            .collect();
        let gaps: Vec<f64> = zs.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        let med = median(&mut gaps.clone());
        if med > 0.0 {
            let irregular = gaps.iter().filter(|g| (**g - med).abs() > 0.1 * med).count();
            if irregular > 0 {
                let msg = format!(
                    "{irregular} inter-slice gaps deviate more than 10% from the median {med} mm"
                );
                warn!("{msg}");
                warnings.push(msg);
            }
            sz = Some(med);
        }
    }
    let sz = match sz.or(first.slice_thickness.filter(|t| *t > 0.0)) {
        Some(v) => v,
        None => {
            return Err(Error::MalformedSeries(format!(
                "{}: cannot determine slice spacing",
                dir.display()
            )))
        }
    };
    let (row_mm, col_mm) = first.pixel_spacing;
    let spacing = Spacing::new(col_mm, row_mm, sz)
        .map_err(|e| Error::MalformedSeries(e.to_string()))?;

    let dims = Dims::new(cols, rows, slices.len());
    let mut data = Vec::with_capacity(dims.len());
    let mut clamped = 0usize;
    for s in &slices {
        let (slope, intercept) = (s.meta.rescale_slope, s.meta.rescale_intercept);
        for px in s.pixels[..rows * cols * 2].chunks_exact(2) {
            let stored = if s.meta.pixel_signed {
                i16::from_le_bytes([px[0], px[1]]) as f64
            } else {
                u16::from_le_bytes([px[0], px[1]]) as f64
            };
            let hu = (stored * slope + intercept) as f32;
            let hu_c = hu.clamp(HU_MIN, HU_MAX);
            if hu_c != hu {
                clamped += 1;
            }
            data.push(hu_c);
        }
    }
    if clamped > 0 {
        let msg = format!("{clamped} voxels outside [{HU_MIN}, {HU_MAX}] HU were clamped");
        warn!("{msg}");
        warnings.push(msg);
    }
    let volume = ScalarVolume::new(dims, spacing, Domain::Hounsfield, data)?;
    Ok(DicomSeries {
        volume,
        metas: slices.into_iter().map(|s| s.meta).collect(),
        warnings,
    })
}

#[cfg(test)]
#[path = "../../tests/common/dicom_writer.rs"]
mod dicom_writer;
