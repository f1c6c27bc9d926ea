//! Neutral on-disk model format: `manifest.json` plus `payload.bin`.
//!
//! Arrays are stored little-endian in manifest order. Floating arrays are
//! `f32` and promoted to `f64` on load; `parents` is `i32` with `-1` for the
//! root and `faces` is `u32`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::{BodyModel, BodyModelParts, PartBones};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "payload.bin";
const FORMAT_TAG: &str = "shapekit-body-model";
const ARRAY_ORDER: [&str; 6] = [
    "template",
    "shape_basis",
    "blend_weights",
    "joint_regressor",
    "parents",
    "faces",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    name: String,
    k: usize,
    j: usize,
    s: usize,
    f: usize,
    dtype: String,
    endianness: String,
    arrays: Vec<ArrayEntry>,
    #[serde(default, skip_serializing_if = "is_default_bones")]
    part_bones: PartBones,
}

fn is_default_bones(b: &PartBones) -> bool {
    *b == PartBones::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    nbytes: usize,
}

impl Manifest {
    fn expected_shape(&self, name: &str) -> (Vec<usize>, &'static str) {
        match name {
            "template" => (vec![self.k, 3], "f32"),
            "shape_basis" => (vec![3 * self.k, self.s], "f32"),
            "blend_weights" => (vec![self.k, self.j], "f32"),
            "joint_regressor" => (vec![self.j, self.k], "f32"),
            "parents" => (vec![self.j], "i32"),
            _ => (vec![self.f, 3], "u32"),
        }
    }
}

/// Writes `dir/manifest.json` and `dir/payload.bin`. Output bytes depend
/// only on the model.
pub fn save_model(model: &BodyModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let parts = model.parts();
    let (k, j, s, f) = (
        model.num_vertices(),
        model.num_joints(),
        model.shape_dim(),
        model.faces().len(),
    );

    let mut payload = Vec::new();
    let mut arrays = Vec::new();
    let mut push = |name: &str, dtype: &str, shape: Vec<usize>, bytes: Vec<u8>, payload: &mut Vec<u8>| {
        arrays.push(ArrayEntry {
            name: name.to_string(),
            dtype: dtype.to_string(),
            shape,
            offset: payload.len(),
            nbytes: bytes.len(),
        });
        payload.extend_from_slice(&bytes);
    };

    let f32_bytes = |vals: &mut dyn Iterator<Item = f64>| -> Vec<u8> {
        vals.flat_map(|v| (v as f32).to_le_bytes()).collect()
    };

    let template = f32_bytes(&mut parts.template.iter().flat_map(|v| v.iter().copied()));
    push("template", "f32", vec![k, 3], template, &mut payload);
    let basis = f32_bytes(&mut row_major(&parts.shape_basis));
    push("shape_basis", "f32", vec![3 * k, s], basis, &mut payload);
    let weights = f32_bytes(&mut row_major(&parts.blend_weights));
    push("blend_weights", "f32", vec![k, j], weights, &mut payload);
    let regressor = f32_bytes(&mut row_major(&parts.joint_regressor));
    push("joint_regressor", "f32", vec![j, k], regressor, &mut payload);
    let parents: Vec<u8> = parts
        .parents
        .iter()
        .flat_map(|p| p.map_or(-1i32, |p| p as i32).to_le_bytes())
        .collect();
    push("parents", "i32", vec![j], parents, &mut payload);
    let faces: Vec<u8> = parts
        .faces
        .iter()
        .flat_map(|face| face.iter().flat_map(|v| v.to_le_bytes()))
        .collect();
    push("faces", "u32", vec![f, 3], faces, &mut payload);

    let manifest = Manifest {
        format: FORMAT_TAG.to_string(),
        version: 1,
        name: parts.name.clone(),
        k,
        j,
        s,
        f,
        dtype: "f32".to_string(),
        endianness: "little".to_string(),
        arrays,
        part_bones: parts.part_bones.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(manifest_path, e))?;
    let payload_path = dir.join(PAYLOAD_FILE);
    fs::write(&payload_path, payload).map_err(|e| Error::io(payload_path, e))?;
    Ok(())
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |r| (0..m.ncols()).map(move |c| m[(r, c)]))
}

/// Loads and validates a model directory.
pub fn load_model(dir: &Path) -> Result<BodyModel> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    if manifest.format != FORMAT_TAG {
        return Err(Error::Manifest(format!("unknown format tag `{}`", manifest.format)));
    }
    if manifest.dtype != "f32" || manifest.endianness != "little" {
        return Err(Error::Manifest(format!(
            "unsupported payload encoding {} / {}",
            manifest.dtype, manifest.endianness
        )));
    }
    let payload_path = dir.join(PAYLOAD_FILE);
    let payload = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;

    let names: Vec<&str> = manifest.arrays.iter().map(|a| a.name.as_str()).collect();
    if names != ARRAY_ORDER {
        return Err(Error::Manifest(format!(
            "arrays must be {ARRAY_ORDER:?} in that order, found {names:?}"
        )));
    }

    let mut slices = Vec::with_capacity(ARRAY_ORDER.len());
    for entry in &manifest.arrays {
        let (shape, dtype) = manifest.expected_shape(&entry.name);
        let mismatch = |expected: String, found: String| Error::ShapeMismatch {
            field: entry.name.clone(),
            expected,
            found,
        };
        if entry.dtype != dtype {
            return Err(mismatch(format!("dtype {dtype}"), format!("dtype {}", entry.dtype)));
        }
        if entry.shape != shape {
            return Err(mismatch(format!("{shape:?}"), format!("{:?}", entry.shape)));
        }
        let count: usize = shape.iter().product();
        if entry.nbytes != 4 * count {
            return Err(mismatch(format!("{} bytes", 4 * count), format!("{} bytes", entry.nbytes)));
        }
        let end = entry.offset + entry.nbytes;
        if end > payload.len() {
            return Err(mismatch(
                format!("bytes {}..{end} in payload", entry.offset),
                format!("payload of {} bytes", payload.len()),
            ));
        }
        slices.push(&payload[entry.offset..end]);
    }

    let (k, j, s) = (manifest.k, manifest.j, manifest.s);
    let floats = |bytes: &[u8]| -> Vec<f64> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect()
    };
    let template_vals = floats(slices[0]);
    let template = template_vals
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect();
    let shape_basis = DMatrix::from_row_slice(3 * k, s, &floats(slices[1]));
    let blend_weights = DMatrix::from_row_slice(k, j, &floats(slices[2]));
    let joint_regressor = DMatrix::from_row_slice(j, k, &floats(slices[3]));
    let parents = slices[4]
        .chunks_exact(4)
        .enumerate()
        .map(|(i, c)| match i32::from_le_bytes([c[0], c[1], c[2], c[3]]) {
            -1 => Ok(None),
            p if p >= 0 => Ok(Some(p as usize)),
            p => Err(Error::invariant("parents", format!("joint {i} has parent {p}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let face_vals: Vec<u32> = slices[5]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let faces = face_vals.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();

    BodyModel::new(BodyModelParts {
        name: manifest.name,
        template,
        shape_basis,
        blend_weights,
        joint_regressor,
        parents,
        faces,
        part_bones: manifest.part_bones,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_toy_model;

    #[test]
    fn toy_round_trip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let toy = make_toy_model(4, 32, 7).unwrap();
        save_model(&toy, &a).unwrap();
        let loaded = load_model(&a).unwrap();
        assert_eq!(loaded.num_vertices(), toy.num_vertices());
        assert_eq!(loaded.parents(), toy.parents());
        assert_eq!(loaded.faces(), toy.faces());
        save_model(&loaded, &b).unwrap();
        for file in [MANIFEST_FILE, PAYLOAD_FILE] {
            assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
        }
    }

    #[test]
    fn short_vertex_payload_is_a_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let toy = make_toy_model(4, 8, 1).unwrap();
        save_model(&toy, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        // manifest claims one more vertex than the template array holds
        let k = m["k"].as_u64().unwrap();
        m["k"] = (k + 1).into();
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        match load_model(dir.path()) {
            Err(Error::ShapeMismatch { field, .. }) => assert_eq!(field, "template"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_names_the_array() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&make_toy_model(3, 8, 2).unwrap(), dir.path()).unwrap();
        let path = dir.path().join(PAYLOAD_FILE);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::ShapeMismatch { field, .. }) if field == "faces"));
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn invalid_weights_are_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&make_toy_model(3, 8, 2).unwrap(), dir.path()).unwrap();
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        let offset = m["arrays"][2]["offset"].as_u64().unwrap() as usize;
        let path = dir.path().join(PAYLOAD_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[offset..offset + 4].copy_from_slice(&0.5f32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Invariant { field, .. }) if field == "blend_weights"));
    }
}
