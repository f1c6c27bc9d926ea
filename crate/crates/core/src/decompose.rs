//! Part segmentation, slicing and the bone-length / slice-width descriptor.

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{regress_joints, BodyModel};
use crate::Vertices;

/// Keeps `param = 1` inside the last slice.
pub const SLICE_EPS: f64 = 1e-9;
/// Bones shorter than this are treated as points.
pub const DEGENERATE_BONE: f64 = 1e-9;

/// Distance from `p` to the infinite line through `a` and `b`; distance to
/// `a` when the two points coincide.
pub fn line_distance<const D: usize>(p: &SVector<f64, D>, a: &SVector<f64, D>, b: &SVector<f64, D>) -> f64 {
    let d = b - a;
    let e = p - a;
    let dd = d.norm_squared();
    if dd.sqrt() < DEGENERATE_BONE {
        return e.norm();
    }
    (e - d * (e.dot(&d) / dd)).norm()
}

/// Normalised, unclamped position of the projection of `p` on segment `a -> b`.
pub fn bone_param<const D: usize>(p: &SVector<f64, D>, a: &SVector<f64, D>, b: &SVector<f64, D>) -> f64 {
    let d = b - a;
    let dd = d.norm_squared();
    if dd.sqrt() < DEGENERATE_BONE {
        return 0.0;
    }
    (p - a).dot(&d) / dd
}

pub fn slice_index(param: f64, n: usize) -> usize {
    (n as f64 * param.clamp(0.0, 1.0 - SLICE_EPS)).floor() as usize
}

/// Per-vertex part and slice labels for one model and slicing number.
#[derive(Clone, Debug)]
pub struct PartDecomposition {
    n: usize,
    part_of_vertex: Vec<usize>,
    bone_of_part: Vec<(usize, usize)>,
    slice_of_vertex: Vec<usize>,
    template_widths: Vec<f64>,
    template_joints: Vertices,
    cells: Vec<Vec<usize>>,
}

impl PartDecomposition {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_parts(&self) -> usize {
        self.bone_of_part.len()
    }

    pub fn part_of_vertex(&self) -> &[usize] {
        &self.part_of_vertex
    }

    pub fn bone_of_part(&self) -> &[(usize, usize)] {
        &self.bone_of_part
    }

    pub fn slice_of_vertex(&self) -> &[usize] {
        &self.slice_of_vertex
    }

    /// Mean slice widths of the template, `n` per part.
    pub fn template_widths(&self) -> &[f64] {
        &self.template_widths
    }

    pub fn template_joints(&self) -> &[Vector3<f64>] {
        &self.template_joints
    }

    /// Vertex indices of cell `part * n + slice`.
    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    pub fn cell(&self, part: usize, slice: usize) -> &[usize] {
        &self.cells[part * self.n + slice]
    }
}

/// Segments by blend-weight argmax (lowest joint wins ties) and slices every
/// part into `n` equal-length bins along its central bone.
pub fn build_decomposition(model: &BodyModel, n: usize) -> Result<PartDecomposition> {
    if n == 0 {
        return Err(Error::InvalidArgument("slicing number must be >= 1".into()));
    }
    let template = model.template();
    let template_joints = regress_joints(model, template)?;
    let bone_of_part = model.part_bones().to_vec();
    let num_parts = bone_of_part.len();

    let part_of_vertex: Vec<usize> = model
        .blend_weights()
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &w) in row.iter().enumerate() {
                if w > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();

    let slice_of_vertex: Vec<usize> = template
        .iter()
        .zip(&part_of_vertex)
        .map(|(p, &part)| {
            let (a, b) = bone_of_part[part];
            slice_index(bone_param(p, &template_joints[a], &template_joints[b]), n)
        })
        .collect();

    let mut cells = vec![Vec::new(); num_parts * n];
    for (k, (&part, &slice)) in part_of_vertex.iter().zip(&slice_of_vertex).enumerate() {
        cells[part * n + slice].push(k);
    }
    if let Some(empty) = cells.iter().position(Vec::is_empty) {
        return Err(Error::EmptySlice {
            part: empty / n,
            slice: empty % n,
        });
    }

    let mut decomp = PartDecomposition {
        n,
        part_of_vertex,
        bone_of_part,
        slice_of_vertex,
        template_widths: Vec::new(),
        template_joints,
        cells,
    };
    decomp.template_widths = cell_widths(template, &decomp.template_joints, &decomp);
    if let Some(i) = decomp.template_widths.iter().position(|&w| !(w > 0.0)) {
        return Err(Error::invariant(
            "template_widths",
            format!("part {} slice {} has zero mean width", i / n, i % n),
        ));
    }
    Ok(decomp)
}

/// Perpendicular distance of vertex `k` to its part's central bone line.
pub fn vertex_width(mesh: &[Vector3<f64>], joints: &[Vector3<f64>], decomp: &PartDecomposition, k: usize) -> f64 {
    let (a, b) = decomp.bone_of_part[decomp.part_of_vertex[k]];
    line_distance(&mesh[k], &joints[a], &joints[b])
}

fn cell_widths(mesh: &[Vector3<f64>], joints: &[Vector3<f64>], decomp: &PartDecomposition) -> Vec<f64> {
    decomp
        .cells
        .iter()
        .map(|cell| {
            let total: f64 = cell.iter().map(|&k| vertex_width(mesh, joints, decomp, k)).sum();
            total / cell.len() as f64
        })
        .collect()
}

/// Bone lengths of a skeleton, indexed like [`BodyModel::bones`].
pub fn bone_lengths(model: &BodyModel, joints: &[Vector3<f64>]) -> Vec<f64> {
    model
        .bones()
        .iter()
        .map(|&(p, c)| (joints[c] - joints[p]).norm())
        .collect()
}

/// Bone lengths `l` and part-slice widths `w` of a rest-pose mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DescriptorFile", into = "DescriptorFile")]
pub struct ShapeDescriptor {
    n: usize,
    bone_lengths: Vec<f64>,
    slice_widths: Vec<f64>,
}

impl ShapeDescriptor {
    /// `slice_widths` is flat, `n` consecutive entries per part.
    pub fn new(n: usize, bone_lengths: Vec<f64>, slice_widths: Vec<f64>) -> Result<Self> {
        if n == 0 || slice_widths.len() % n != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} slice widths do not split into slices of {n}",
                slice_widths.len()
            )));
        }
        let bad = |x: &f64| !(x.is_finite() && *x > 0.0);
        if bone_lengths.iter().any(bad) {
            return Err(Error::InvalidArgument("bone lengths must be positive and finite".into()));
        }
        if slice_widths.iter().any(bad) {
            return Err(Error::InvalidArgument("slice widths must be positive and finite".into()));
        }
        Ok(ShapeDescriptor {
            n,
            bone_lengths,
            slice_widths,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bone_lengths(&self) -> &[f64] {
        &self.bone_lengths
    }

    pub fn slice_widths(&self) -> &[f64] {
        &self.slice_widths
    }

    pub fn num_parts(&self) -> usize {
        self.slice_widths.len() / self.n
    }

    pub fn part_widths(&self, part: usize) -> &[f64] {
        &self.slice_widths[part * self.n..(part + 1) * self.n]
    }

    /// Total entry count, `(J - 1) + nJ`.
    pub fn len(&self) -> usize {
        self.bone_lengths.len() + self.slice_widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `l` followed by `w`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.bone_lengths.iter().chain(&self.slice_widths).copied().collect()
    }

    /// Inverse of [`ShapeDescriptor::to_vec`] for a descriptor of the same layout.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::Dimension {
                what: "descriptor entries",
                expected: self.len(),
                got: values.len(),
            });
        }
        let (l, w) = values.split_at(self.bone_lengths.len());
        ShapeDescriptor::new(self.n, l.to_vec(), w.to_vec())
    }

    pub fn check_layout(&self, model: &BodyModel, decomp: &PartDecomposition) -> Result<()> {
        if self.n != decomp.n() {
            return Err(Error::Dimension {
                what: "slicing number",
                expected: decomp.n(),
                got: self.n,
            });
        }
        if self.bone_lengths.len() != model.bones().len() {
            return Err(Error::Dimension {
                what: "bone lengths",
                expected: model.bones().len(),
                got: self.bone_lengths.len(),
            });
        }
        if self.slice_widths.len() != decomp.cells().len() {
            return Err(Error::Dimension {
                what: "slice widths",
                expected: decomp.cells().len(),
                got: self.slice_widths.len(),
            });
        }
        Ok(())
    }
}

/// JSON layout: `{"n", "bone_lengths": [...], "slice_widths": [[...], ...]}`.
#[derive(Serialize, Deserialize)]
struct DescriptorFile {
    n: usize,
    bone_lengths: Vec<f64>,
    slice_widths: Vec<Vec<f64>>,
}

impl From<ShapeDescriptor> for DescriptorFile {
    fn from(d: ShapeDescriptor) -> Self {
        DescriptorFile {
            n: d.n,
            slice_widths: d.slice_widths.chunks(d.n).map(<[f64]>::to_vec).collect(),
            bone_lengths: d.bone_lengths,
        }
    }
}

impl TryFrom<DescriptorFile> for ShapeDescriptor {
    type Error = Error;

    fn try_from(f: DescriptorFile) -> Result<Self> {
        if let Some(p) = f.slice_widths.iter().position(|row| row.len() != f.n) {
            return Err(Error::InvalidArgument(format!(
                "part {p} has {} slice widths, expected {}",
                f.slice_widths[p].len(),
                f.n
            )));
        }
        ShapeDescriptor::new(f.n, f.bone_lengths, f.slice_widths.concat())
    }
}

/// Descriptor of a rest-pose mesh of `model`.
pub fn extract_descriptor(model: &BodyModel, decomp: &PartDecomposition, mesh: &[Vector3<f64>]) -> Result<ShapeDescriptor> {
    let joints = regress_joints(model, mesh)?;
    Ok(ShapeDescriptor {
        n: decomp.n,
        bone_lengths: bone_lengths(model, &joints),
        slice_widths: cell_widths(mesh, &joints, decomp),
    })
}
