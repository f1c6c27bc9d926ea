//! Plain-text file formats: OBJ meshes, coefficient and pose CSV, and
//! descriptor JSON.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! reading back yields bit-identical values and output is deterministic.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::decompose::ShapeDescriptor;
use crate::error::{Error, Result};
use crate::model::{Pose, ShapeCoeffs};
use crate::Vertices;

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_err(source: &str, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        line,
        detail: detail.into(),
    }
}

/// Numeric rows of a comma-separated file; blank lines and `#` comments
/// are skipped. Returns `(line number, values)`.
fn csv_rows(text: &str, source: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(|f| {
                let f = f.trim();
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(source, i + 1, format!("not a finite number: {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((i + 1, values));
    }
    Ok(rows)
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// One coefficient vector per row.
pub fn parse_betas(text: &str, source: &str, shape_dim: Option<usize>) -> Result<Vec<ShapeCoeffs>> {
    let rows = csv_rows(text, source)?;
    if rows.is_empty() {
        return Err(parse_err(source, 0, "no coefficient rows"));
    }
    let width = shape_dim.unwrap_or(rows[0].1.len());
    rows.into_iter()
        .map(|(line, values)| {
            if values.len() != width {
                return Err(parse_err(source, line, format!("expected {width} coefficients, found {}", values.len())));
            }
            ShapeCoeffs::new(values)
        })
        .collect()
}

pub fn format_betas(betas: &[ShapeCoeffs]) -> String {
    let mut out = String::new();
    for b in betas {
        out.push_str(&join(b.as_slice().iter().copied()));
        out.push('\n');
    }
    out
}

pub fn read_betas(path: &Path, shape_dim: Option<usize>) -> Result<Vec<ShapeCoeffs>> {
    parse_betas(&read_text(path)?, &path.display().to_string(), shape_dim)
}

pub fn write_betas(path: &Path, betas: &[ShapeCoeffs]) -> Result<()> {
    write_text(path, &format_betas(betas))
}

/// `num_joints` rows of axis-angle `rx,ry,rz`, optionally followed by one
/// `tx,ty,tz` translation row.
pub fn parse_pose(text: &str, source: &str, num_joints: usize) -> Result<Pose> {
    let rows = csv_rows(text, source)?;
    if rows.len() != num_joints && rows.len() != num_joints + 1 {
        return Err(parse_err(
            source,
            0,
            format!("expected {num_joints} rotation rows and an optional translation row, found {} rows", rows.len()),
        ));
    }
    let mut vectors = Vec::with_capacity(rows.len());
    for (line, v) in rows {
        if v.len() != 3 {
            return Err(parse_err(source, line, format!("expected 3 values, found {}", v.len())));
        }
        vectors.push(Vector3::new(v[0], v[1], v[2]));
    }
    let translation = if vectors.len() > num_joints {
        vectors.pop().expect("length checked")
    } else {
        Vector3::zeros()
    };
    Pose::new(vectors, translation)
}

pub fn format_pose(pose: &Pose) -> String {
    let mut out = String::new();
    for r in pose.rotations().iter().chain(std::iter::once(&pose.translation())) {
        out.push_str(&join(r.iter().copied()));
        out.push('\n');
    }
    out
}

pub fn read_pose(path: &Path, num_joints: usize) -> Result<Pose> {
    parse_pose(&read_text(path)?, &path.display().to_string(), num_joints)
}

/// ASCII OBJ with `v` and 1-based `f` records.
pub fn format_obj(vertices: &[Vector3<f64>], faces: &[[u32; 3]]) -> String {
    let mut out = String::new();
    for v in vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).expect("writing to a string");
    }
    for f in faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).expect("writing to a string");
    }
    out
}

/// Vertices and triangles of an OBJ file. Other records are ignored;
/// polygon faces are fan-triangulated and `v/vt/vn` references reduced to
/// the vertex index.
pub fn parse_obj(text: &str, source: &str) -> Result<(Vertices, Vec<[u32; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let mut fields = raw.split_whitespace();
        match fields.next() {
            Some("v") => {
                let c = fields
                    .take(3)
                    .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                    .collect::<Option<Vec<_>>>()
                    .filter(|c| c.len() == 3)
                    .ok_or_else(|| parse_err(source, i + 1, "vertex needs three finite coordinates"))?;
                vertices.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx = fields
                    .map(|f| {
                        f.split('/')
                            .next()
                            .and_then(|s| s.parse::<i64>().ok())
                            .and_then(|k| match k {
                                k if k > 0 => Some(k - 1),
                                k if k < 0 => Some(vertices.len() as i64 + k),
                                _ => None,
                            })
                            .filter(|&k| k >= 0 && (k as usize) < vertices.len())
                            .map(|k| k as u32)
                            .ok_or_else(|| parse_err(source, i + 1, format!("bad face index {f:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(source, i + 1, "face needs at least three vertices"));
                }
                for w in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[w], idx[w + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

pub fn read_obj(path: &Path) -> Result<(Vertices, Vec<[u32; 3]>)> {
    parse_obj(&read_text(path)?, &path.display().to_string())
}

pub fn write_obj(path: &Path, vertices: &[Vector3<f64>], faces: &[[u32; 3]]) -> Result<()> {
    write_text(path, &format_obj(vertices, faces))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_pretty<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn read_descriptor(path: &Path) -> Result<ShapeDescriptor> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(&path.display().to_string(), e.line(), e.to_string()))
}

pub fn write_descriptor(path: &Path, desc: &ShapeDescriptor) -> Result<()> {
    write_text(path, &to_json_pretty(desc)?)
}
