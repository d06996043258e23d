//! Minimal PLY point-cloud reader/writer (vertex x,y,z plus ignored extras).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Debug, Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return Err(Error::Ply(format!("unsupported property type {name:?}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8], big: bool) -> f64 {
        macro_rules! rd {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                (if big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => rd!(i16, 2),
            Scalar::U16 => rd!(u16, 2),
            Scalar::I32 => rd!(i32, 4),
            Scalar::U32 => rd!(u32, 4),
            Scalar::F32 => rd!(f32, 4),
            Scalar::F64 => rd!(f64, 8),
        }
    }
}

/// Reads the vertex positions of an ASCII or binary PLY file.
pub fn parse_ply(bytes: &[u8]) -> Result<Vec<Vec3>> {
    let mut pos = 0usize;
    let mut next_line = || -> Result<String> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| Error::Ply("truncated header".into()))?;
        pos += end + 1;
        Ok(String::from_utf8_lossy(&rest[..end]).trim_end_matches('\r').to_string())
    };
    if next_line()?.trim() != "ply" {
        return Err(Error::Ply("missing ply magic".into()));
    }
    let mut format = None;
    let mut vertex_count = 0usize;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    let mut seen_vertex = false;
    loop {
        let line = next_line()?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    "binary_big_endian" => Format::BinaryBe,
                    _ => return Err(Error::Ply(format!("unknown format {f:?}"))),
                })
            }
            ["element", name, n] => {
                in_vertex = false;
                if *name == "vertex" {
                    if seen_vertex {
                        return Err(Error::Ply("duplicate vertex element".into()));
                    }
                    if !props.is_empty() {
                        return Err(Error::Ply("vertex must be the first element".into()));
                    }
                    vertex_count = n.parse().map_err(|_| Error::Ply(format!("bad count {n:?}")))?;
                    in_vertex = true;
                    seen_vertex = true;
                } else if !seen_vertex {
                    return Err(Error::Ply("vertex must be the first element".into()));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::Ply("list properties on vertices are not supported".into()))
            }
            ["property", ty, name] if in_vertex => props.push((name.to_string(), Scalar::parse(ty)?)),
            ["end_header"] => break,
            _ => {}
        }
    }
    let format = format.ok_or_else(|| Error::Ply("missing format line".into()))?;
    let idx = |axis: &str| {
        props
            .iter()
            .position(|(n, _)| n == axis)
            .ok_or_else(|| Error::Ply(format!("missing vertex property {axis:?}")))
    };
    let (ix, iy, iz) = (idx("x")?, idx("y")?, idx("z")?);
    let mut points = Vec::with_capacity(vertex_count);
    match format {
        Format::Ascii => {
            let body = String::from_utf8_lossy(&bytes[pos..]);
            let mut lines = body.lines().filter(|l| !l.trim().is_empty());
            for v in 0..vertex_count {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::Ply(format!("expected {vertex_count} vertices, got {v}")))?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::Ply(format!("bad value {t:?}"))))
                    .collect::<Result<_>>()?;
                if vals.len() < props.len() {
                    return Err(Error::Ply(format!("vertex {v} has {} values", vals.len())));
                }
                points.push(Vec3::new(vals[ix], vals[iy], vals[iz]));
            }
        }
        Format::BinaryLe | Format::BinaryBe => {
            let big = format == Format::BinaryBe;
            let offsets: Vec<usize> = props
                .iter()
                .scan(0, |acc, (_, s)| {
                    let o = *acc;
                    *acc += s.size();
                    Some(o)
                })
                .collect();
            let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
            let body = &bytes[pos..];
            if body.len() < stride * vertex_count {
                return Err(Error::Ply("truncated binary body".into()));
            }
            for v in 0..vertex_count {
                let rec = &body[v * stride..(v + 1) * stride];
                let get = |i: usize| props[i].1.read(&rec[offsets[i]..], big);
                points.push(Vec3::new(get(ix), get(iy), get(iz)));
            }
        }
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::Ply("non-finite vertex coordinate".into()));
    }
    Ok(points)
}

pub fn load_ply(path: &Path) -> Result<Vec<Vec3>> {
    parse_ply(&std::fs::read(path)?)
}

/// Writes an ASCII PLY with double-precision coordinates.
pub fn write_ascii_ply<W: Write>(mut w: W, points: &[Vec3]) -> Result<()> {
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", points.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z\nend_header")?;
    for p in points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_round_trip() {
        let pts = vec![Vec3::new(0.1, -2.0, 3.5), Vec3::new(1e-3, 0.0, 7.25)];
        let mut buf = Vec::new();
        write_ascii_ply(&mut buf, &pts).unwrap();
        assert_eq!(parse_ply(&buf).unwrap(), pts);
    }

    #[test]
    fn binary_with_colour() {
        let mut buf = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n".to_vec();
        for (p, c) in [([1.0f32, 2.0, 3.0], [255u8, 0, 0]), ([-1.5, 0.5, 0.25], [0, 0, 9])] {
            for v in p {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&c);
        }
        let pts = parse_ply(&buf).unwrap();
        assert_eq!(pts, vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.5, 0.5, 0.25)]);
    }

    #[test]
    fn rejects_missing_coordinate() {
        let buf = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n";
        assert!(parse_ply(buf).is_err());
    }
}
