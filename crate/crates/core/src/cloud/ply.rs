//! Minimal PLY reader/writer for `x y z` vertex clouds.
//!
//! Writes `property float x|y|z` (32-bit). Reads ASCII and binary
//! little-endian files whose vertex element carries `float`/`double`
//! properties; only `x`, `y`, `z` are kept.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{PointCloud, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyFormat {
    #[default]
    Ascii,
    BinaryLittleEndian,
}

pub fn write_ply(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    fs::write(path, encode(cloud, format))?;
    Ok(())
}

pub fn encode(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let tag = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = Vec::new();
    write!(
        out,
        "ply\nformat {tag} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    )
    .expect("writing to a Vec");
    for p in cloud.points() {
        let xyz = [p.x as f32, p.y as f32, p.z as f32];
        match format {
            PlyFormat::Ascii => {
                writeln!(out, "{} {} {}", xyz[0], xyz[1], xyz[2]).expect("writing to a Vec");
            }
            PlyFormat::BinaryLittleEndian => {
                for c in xyz {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::corrupt(path, format!("cannot read: {e}")))?;
    decode(&bytes).map_err(|reason| Error::corrupt(path, reason))
}

#[derive(Clone, Copy)]
enum Scalar {
    F32,
    F64,
}

pub fn decode(bytes: &[u8]) -> std::result::Result<PointCloud, String> {
    let header_end = find_header_end(bytes).ok_or("missing end_header")?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| "header is not UTF-8")?;
    let body = &bytes[header_end..];

    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing ply magic".into());
    }
    let mut format = None;
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, ..] => return Err(format!("unsupported format {other}")),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| format!("bad vertex count {n}"))?);
                in_vertex = true;
            }
            ["element", name, n] => {
                if *n != "0" {
                    return Err(format!("unsupported element {name}"));
                }
                in_vertex = false;
            }
            ["property", ty, name] if in_vertex => {
                let scalar = match *ty {
                    "float" | "float32" => Scalar::F32,
                    "double" | "float64" => Scalar::F64,
                    other => return Err(format!("unsupported property type {other}")),
                };
                props.push((name.to_string(), scalar));
            }
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            _ => return Err(format!("unrecognized header line: {line}")),
        }
    }
    let format = format.ok_or("missing format line")?;
    let count = count.ok_or("missing vertex element")?;
    let slot = |axis: &str| {
        props
            .iter()
            .position(|(n, _)| n == axis)
            .ok_or_else(|| format!("missing property {axis}"))
    };
    let (ix, iy, iz) = (slot("x")?, slot("y")?, slot("z")?);

    let mut points = Vec::with_capacity(count);
    match format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| "body is not UTF-8")?;
            let mut rows = text.lines().filter(|l| !l.trim().is_empty());
            for v in 0..count {
                let row = rows
                    .next()
                    .ok_or_else(|| format!("truncated: {v} of {count} vertices"))?;
                let vals: Vec<f64> = row
                    .split_whitespace()
                    .zip(&props)
                    .map(|(tok, (_, ty))| match ty {
                        Scalar::F32 => tok
                            .parse::<f32>()
                            .map(f64::from)
                            .map_err(|_| format!("bad number {tok}")),
                        Scalar::F64 => tok.parse::<f64>().map_err(|_| format!("bad number {tok}")),
                    })
                    .collect::<std::result::Result<_, _>>()?;
                if vals.len() != props.len() {
                    return Err(format!(
                        "vertex {v} has {} values, expected {}",
                        vals.len(),
                        props.len()
                    ));
                }
                points.push(Vec3::new(vals[ix], vals[iy], vals[iz]));
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let stride: usize = props
                .iter()
                .map(|(_, t)| match t {
                    Scalar::F32 => 4,
                    Scalar::F64 => 8,
                })
                .sum();
            if body.len() < stride * count {
                return Err(format!("truncated: {} bytes for {count} vertices", body.len()));
            }
            for v in 0..count {
                let mut off = v * stride;
                let mut vals = Vec::with_capacity(props.len());
                for (_, ty) in &props {
                    match ty {
                        Scalar::F32 => {
                            let b: [u8; 4] = body[off..off + 4].try_into().expect("4 bytes");
                            vals.push(f32::from_le_bytes(b) as f64);
                            off += 4;
                        }
                        Scalar::F64 => {
                            let b: [u8; 8] = body[off..off + 8].try_into().expect("8 bytes");
                            vals.push(f64::from_le_bytes(b));
                            off += 8;
                        }
                    }
                }
                points.push(Vec3::new(vals[ix], vals[iy], vals[iz]));
            }
        }
    }
    PointCloud::new(points).map_err(|e| e.to_string())
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let marker = b"end_header";
    let pos = bytes.windows(marker.len()).position(|w| w == marker)?;
    let mut end = pos + marker.len();
    if bytes.get(end) == Some(&b'\r') {
        end += 1;
    }
    if bytes.get(end) == Some(&b'\n') {
        end += 1;
    }
    Some(end)
}
