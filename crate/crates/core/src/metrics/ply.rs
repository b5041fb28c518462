//! PLY point cloud files.
//!
//! ASCII files use the `float` header the common viewers expect but store
//! each coordinate with shortest round-trip formatting, so reading back
//! reproduces the `f64` bits. Binary files store little-endian doubles.

use std::fmt::Write as _;
use std::path::Path;

use crate::camera::{Point3, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

impl std::str::FromStr for PlyFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascii" => Ok(PlyFormat::Ascii),
            "binary" | "binary_little_endian" => Ok(PlyFormat::BinaryLittleEndian),
            other => Err(Error::Config(format!("unknown PLY format '{other}' (ascii, binary)"))),
        }
    }
}

pub fn encode_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let n = cloud.len();
    match format {
        PlyFormat::Ascii => {
            let mut s = format!(
                "ply\nformat ascii 1.0\nelement vertex {n}\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
            );
            for p in &cloud.points {
                let _ = writeln!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]);
            }
            s.into_bytes()
        }
        PlyFormat::BinaryLittleEndian => {
            let mut out = format!(
                "ply\nformat binary_little_endian 1.0\nelement vertex {n}\nproperty double x\nproperty double y\nproperty double z\nend_header\n"
            )
            .into_bytes();
            for p in &cloud.points {
                for v in p {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            out
        }
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(format!("PLY: {}", msg.into()))
}

pub fn decode_ply(bytes: &[u8]) -> Result<PointCloud> {
    let end = b"end_header\n";
    let header_end = bytes
        .windows(end.len())
        .position(|w| w == end)
        .ok_or_else(|| corrupt("missing end_header"))?
        + end.len();
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| corrupt("header is not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(corrupt("missing 'ply' magic"));
    }
    let mut format = None;
    let mut count = None;
    let mut props = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["format", "ascii", "1.0"] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", "1.0"] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, ..] => return Err(corrupt(format!("unsupported format '{other}'"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| corrupt(format!("bad vertex count '{n}'")))?)
            }
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            ["comment", ..] | ["end_header"] | [] => {}
            _ => return Err(corrupt(format!("unexpected header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| corrupt("missing format line"))?;
    let n = count.ok_or_else(|| corrupt("missing vertex element"))?;
    let names: Vec<&str> = props.iter().map(|(_, n)| n.as_str()).collect();
    if names != ["x", "y", "z"] {
        return Err(corrupt(format!("expected properties x y z, got {names:?}")));
    }
    let body = &bytes[header_end..];
    let mut points: Vec<Point3> = Vec::with_capacity(n.min(1 << 24));
    match format {
        PlyFormat::Ascii => {
            if n > 0 && body.last() != Some(&b'\n') {
                return Err(corrupt("last vertex line is unterminated"));
            }
            let text = std::str::from_utf8(body).map_err(|_| corrupt("body is not UTF-8"))?;
            let mut rows = text.lines().filter(|l| !l.trim().is_empty());
            for i in 0..n {
                let line = rows.next().ok_or_else(|| corrupt(format!("expected {n} vertices, found {i}")))?;
                let v: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| corrupt(format!("bad vertex line '{line}'")))?;
                if v.len() != 3 {
                    return Err(corrupt(format!("vertex line '{line}' needs 3 values")));
                }
                points.push([v[0], v[1], v[2]]);
            }
            if rows.next().is_some() {
                return Err(corrupt("trailing data after vertices"));
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let width = match props.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>().as_slice() {
                ["double", "double", "double"] => 8,
                ["float", "float", "float"] => 4,
                other => return Err(corrupt(format!("unsupported property types {other:?}"))),
            };
            if body.len() != n * 3 * width {
                return Err(corrupt(format!(
                    "body holds {} bytes, {n} vertices need {}",
                    body.len(),
                    n * 3 * width
                )));
            }
            for chunk in body.chunks_exact(3 * width) {
                let mut p = [0.0; 3];
                for (a, c) in p.iter_mut().zip(chunk.chunks_exact(width)) {
                    *a = match width {
                        8 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                        _ => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                    };
                }
                points.push(p);
            }
        }
    }
    Ok(PointCloud::new(points))
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ply(cloud, format)).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    decode_ply(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> PointCloud {
        PointCloud::new(vec![[0.1, -2.5e-300, 3.0], [f64::MIN_POSITIVE, 1.0 / 3.0, -0.0]])
    }

    #[test]
    fn ascii_header_is_exact() {
        let s = String::from_utf8(encode_ply(&cloud(), PlyFormat::Ascii)).unwrap();
        assert!(s.starts_with(
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
        ));
    }

    #[test]
    fn both_formats_roundtrip_bits() {
        for f in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let back = decode_ply(&encode_ply(&cloud(), f)).unwrap();
            for (a, b) in back.points.iter().zip(&cloud().points) {
                for k in 0..3 {
                    assert_eq!(a[k].to_bits(), b[k].to_bits());
                }
            }
        }
    }

    #[test]
    fn truncation_is_typed() {
        for f in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let bytes = encode_ply(&cloud(), f);
            for cut in 0..bytes.len() {
                let r = decode_ply(&bytes[..cut]);
                assert!(matches!(r, Err(Error::Corrupt(_))), "cut {cut}: {r:?}");
            }
        }
    }
}
