//! RVOL: raw volume interchange format.
//!
//! Layout: magic `RVOL`, version byte `1`, header length as u32 LE, the
//! header as compact JSON, then the voxel payload little-endian in x-fastest
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{ClassMap, Dims, Domain, LabelVolume, ScalarVolume, Spacing};

pub const MAGIC: &[u8; 4] = b"RVOL";
pub const VERSION: u8 = 1;

/// Refuse volumes beyond this many voxels rather than attempting the allocation.
const MAX_VOXELS: usize = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Scalar,
    Labels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Int16,
    Float32,
}

impl Encoding {
    pub fn size(self) -> usize {
        match self {
            Encoding::Int16 => 2,
            Encoding::Float32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RvolHeader {
    pub kind: Kind,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    pub encoding: Encoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<ClassMap>,
}

impl RvolHeader {
    fn validate(&self) -> Result<(Dims, Spacing)> {
        let [nx, ny, nz] = self.dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidHeader(format!("zero dimension in {:?}", self.dims)));
        }
        let voxels = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .filter(|&v| v <= MAX_VOXELS)
            .ok_or_else(|| Error::InvalidHeader(format!("dims {:?} overflow", self.dims)))?;
        voxels
            .checked_mul(self.encoding.size())
            .ok_or_else(|| Error::InvalidHeader(format!("dims {:?} overflow", self.dims)))?;
        let spacing = Spacing::try_from(self.spacing)
            .map_err(|e| Error::InvalidHeader(e.to_string()))?;
        match self.kind {
            Kind::Scalar if self.domain.is_none() => {
                return Err(Error::InvalidHeader("scalar volume without domain".into()))
            }
            Kind::Labels if self.classes.is_none() => {
                return Err(Error::InvalidHeader("label volume without class map".into()))
            }
            Kind::Labels if self.encoding != Encoding::Int16 => {
                return Err(Error::InvalidHeader("label volumes must be int16".into()))
            }
            _ => {}
        }
        Ok((Dims::from(self.dims), spacing))
    }

    pub fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.encoding.size()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RvolVolume {
    Scalar(ScalarVolume),
    Labels(LabelVolume),
}

/// int16 when every value is an integer in range, float32 otherwise.
fn scalar_encoding(v: &ScalarVolume) -> Encoding {
    let integral = v.domain() == Domain::Hounsfield
        && v.data().iter().all(|&x| {
            x.fract() == 0.0 && x >= i16::MIN as f32 && x <= i16::MAX as f32
        });
    if integral {
        Encoding::Int16
    } else {
        Encoding::Float32
    }
}

fn frame(header: &RvolHeader, payload: Vec<u8>) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(9 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend(payload);
    out
}

pub fn encode_scalar(v: &ScalarVolume) -> Vec<u8> {
    let encoding = scalar_encoding(v);
    let header = RvolHeader {
        kind: Kind::Scalar,
        dims: v.dims().as_array(),
        spacing: v.spacing().as_array(),
        domain: Some(v.domain()),
        encoding,
        classes: None,
    };
    let mut payload = Vec::with_capacity(header.payload_len());
    match encoding {
        Encoding::Int16 => {
            for &x in v.data() {
                payload.extend_from_slice(&(x as i16).to_le_bytes());
            }
        }
        Encoding::Float32 => {
            for &x in v.data() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    frame(&header, payload)
}

pub fn encode_labels(l: &LabelVolume) -> Vec<u8> {
    let header = RvolHeader {
        kind: Kind::Labels,
        dims: l.dims().as_array(),
        spacing: l.spacing().as_array(),
        domain: None,
        encoding: Encoding::Int16,
        classes: Some(l.classes().clone()),
    };
    let mut payload = Vec::with_capacity(header.payload_len());
    for &x in l.labels() {
        payload.extend_from_slice(&(x as i16).to_le_bytes());
    }
    frame(&header, payload)
}

pub fn decode(bytes: &[u8]) -> Result<RvolVolume> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(Error::MalformedVolume("missing RVOL magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::MalformedVolume(format!(
            "unsupported RVOL version {}",
            bytes[4]
        )));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let header_end = 9usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::MalformedVolume("truncated header".into()))?;
    let header: RvolHeader = serde_json::from_slice(&bytes[9..header_end])
        .map_err(|e| Error::InvalidHeader(e.to_string()))?;
    let (dims, spacing) = header.validate()?;
    let payload = &bytes[header_end..];
    let expected = header.payload_len();
    if payload.len() < expected {
        return Err(Error::MalformedVolume(format!(
            "truncated payload: {} of {expected} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::MalformedVolume(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    let values: Vec<f32> = match header.encoding {
        Encoding::Int16 => payload
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32)
            .collect(),
        Encoding::Float32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
    };
    match header.kind {
        Kind::Scalar => Ok(RvolVolume::Scalar(ScalarVolume::new(
            dims,
            spacing,
            header.domain.expect("validated"),
            values,
        )?)),
        Kind::Labels => {
            let classes = header.classes.expect("validated");
            let c = classes.count();
            let labels = values
                .iter()
                .map(|&v| {
                    if v < 0.0 || v as usize >= c {
                        Err(Error::LabelOutOfRange {
                            label: v.max(0.0) as usize,
                            classes: c,
                        })
                    } else {
                        Ok(v as u8)
                    }
                })
                .collect::<Result<Vec<u8>>>()?;
            Ok(RvolVolume::Labels(LabelVolume::new(dims, spacing, classes, labels)?))
        }
    }
}

pub fn read(path: &Path) -> Result<RvolVolume> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&bytes)
}

pub fn read_scalar(path: &Path) -> Result<ScalarVolume> {
    match read(path)? {
        RvolVolume::Scalar(v) => Ok(v),
        RvolVolume::Labels(_) => Err(Error::MalformedVolume(format!(
            "{} holds labels, expected a scalar volume",
            path.display()
        ))),
    }
}

pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    match read(path)? {
        RvolVolume::Labels(l) => Ok(l),
        RvolVolume::Scalar(_) => Err(Error::MalformedVolume(format!(
            "{} holds a scalar volume, expected labels",
            path.display()
        ))),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_scalar(path: &Path, v: &ScalarVolume) -> Result<()> {
    write_bytes(path, &encode_scalar(v))
}

pub fn write_labels(path: &Path, l: &LabelVolume) -> Result<()> {
    write_bytes(path, &encode_labels(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header_bytes(json: &str, payload: &[u8]) -> Vec<u8> {
        let mut b = MAGIC.to_vec();
        b.push(VERSION);
        b.extend_from_slice(&(json.len() as u32).to_le_bytes());
        b.extend_from_slice(json.as_bytes());
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn zero_dims_rejected() {
        let b = header_bytes(
            r#"{"kind":"scalar","dims":[0,4,4],"spacing":[1,1,1],"domain":"hounsfield","encoding":"int16"}"#,
            &[],
        );
        assert!(matches!(decode(&b), Err(Error::InvalidHeader(_))));
    }

    #[test]
    fn overflowing_dims_rejected() {
        let b = header_bytes(
            &format!(
                r#"{{"kind":"scalar","dims":[{0},{0},{0}],"spacing":[1,1,1],"domain":"hounsfield","encoding":"int16"}}"#,
                usize::MAX / 2
            ),
            &[],
        );
        assert!(matches!(decode(&b), Err(Error::InvalidHeader(_))));
    }

    #[test]
    fn label_out_of_range_rejected() {
        let classes = serde_json::to_string(&ClassMap::cardiac()).unwrap();
        let json = format!(
            r#"{{"kind":"labels","dims":[2,1,1],"spacing":[1,1,1],"encoding":"int16","classes":{classes}}}"#
        );
        let b = header_bytes(&json, &[1, 0, 5, 0]);
        assert!(matches!(
            decode(&b),
            Err(Error::LabelOutOfRange { label: 5, classes: 5 })
        ));
    }

    #[test]
    fn magic_and_truncation() {
        let v = ScalarVolume::new(Dims::cube(2), Spacing::unit(), Domain::Hounsfield, vec![7.0; 8])
            .unwrap();
        let mut bytes = encode_scalar(&v);
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(Error::MalformedVolume(_))));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::MalformedVolume(_))));
    }

    #[test]
    fn non_integral_hu_uses_float32() {
        let v = ScalarVolume::new(Dims::cube(1), Spacing::unit(), Domain::Hounsfield, vec![0.5])
            .unwrap();
        let bytes = encode_scalar(&v);
        assert_eq!(decode(&bytes).unwrap(), RvolVolume::Scalar(v.clone()));
        assert_eq!(encode_scalar(&v), bytes);
    }

    proptest! {
        #[test]
        fn hu_round_trip(data in proptest::collection::vec(-1024i32..3000, 16 * 16 * 16),
                         sx in 0.1f64..3.0, sz in 0.1f64..5.0) {
            let v = ScalarVolume::new(
                Dims::cube(16),
                Spacing::new(sx, sx, sz).unwrap(),
                Domain::Hounsfield,
                data.iter().map(|&x| x as f32).collect(),
            ).unwrap();
            let bytes = encode_scalar(&v);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &RvolVolume::Scalar(v));
            if let RvolVolume::Scalar(b) = back {
                prop_assert_eq!(encode_scalar(&b), bytes);
            }
        }

        #[test]
        fn normalized_and_label_round_trip(data in proptest::collection::vec(0.0f32..=1.0, 60),
                                           labels in proptest::collection::vec(0u8..5, 60)) {
            let d = Dims::new(3, 4, 5);
            let v = ScalarVolume::new(d, Spacing::new(0.7, 0.7, 1.25).unwrap(), Domain::Normalized, data).unwrap();
            let bytes = encode_scalar(&v);
            prop_assert_eq!(decode(&bytes).unwrap(), RvolVolume::Scalar(v));
            let l = LabelVolume::new(d, Spacing::unit(), ClassMap::cardiac(), labels).unwrap();
            let bytes = encode_labels(&l);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &RvolVolume::Labels(l));
            if let RvolVolume::Labels(b) = back {
                prop_assert_eq!(encode_labels(&b), bytes);
            }
        }
    }
}
