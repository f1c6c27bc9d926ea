//! Annotation geometry for clothing-preserving affine augmentation.
//!
//! A projected body is warped in the image by `T = S(a, b) R(phi)` about the
//! image centre. Widths measured against a part's 2D bone obey
//! `w̄ l̄ = ab w l`, which gives closed-form post-transform widths; bone
//! lengths follow from stretching each 3D bone until its projection matches
//! the warped 2D bone.

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decompose::{PartDecomposition, ShapeDescriptor, DEGENERATE_BONE};
use crate::error::{Error, Result};
use crate::model::BodyModel;
use crate::Vertices;

/// 2D bones shorter than this (pixels) are treated as viewed end-on.
pub const DEGENERATE_BONE_PX: f64 = 1e-9;
/// Tolerance (pixels) on the target length of an end-on bone.
pub const UNSOLVABLE_TOL_PX: f64 = 1e-6;

/// Orthographic camera: drop depth, scale by `scale` px/m, add `offset` px.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthoCamera {
    pub scale: f64,
    pub offset: Vector2<f64>,
}

impl OrthoCamera {
    pub fn new(scale: f64, offset: Vector2<f64>) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) || !offset.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("camera scale must be positive and finite, got {scale}")));
        }
        Ok(OrthoCamera { scale, offset })
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(p.x, p.y) * self.scale + self.offset
    }
}

/// Image-space scaling `a` (x), `b` (y) after a rotation by `phi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineAugment {
    pub a: f64,
    pub b: f64,
    pub phi: f64,
}

impl AffineAugment {
    pub fn new(a: f64, b: f64, phi: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() && phi.is_finite()) {
            return Err(Error::InvalidArgument(format!("augment needs a, b > 0 and finite phi, got ({a}, {b}, {phi})")));
        }
        Ok(AffineAugment { a, b, phi })
    }

    pub fn identity() -> Self {
        AffineAugment { a: 1.0, b: 1.0, phi: 0.0 }
    }

    /// Aspect ratio `a/b` from `U(0.4, 1)` with probability 1/3, else
    /// `U(1, 2.5)`; `b = 1`; `phi ~ U(-max_phi, max_phi)`.
    pub fn sample<R: Rng>(rng: &mut R, max_phi: f64) -> Self {
        let ratio = if rng.random::<f64>() < 1.0 / 3.0 {
            rng.random_range(0.4..1.0)
        } else {
            rng.random_range(1.0..2.5)
        };
        let phi = if max_phi > 0.0 {
            rng.random_range(-max_phi..max_phi)
        } else {
            0.0
        };
        AffineAugment { a: ratio, b: 1.0, phi }
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        let (s, c) = self.phi.sin_cos();
        Matrix2::new(self.a, 0.0, 0.0, self.b) * Matrix2::new(c, -s, s, c)
    }

    pub fn det(&self) -> f64 {
        self.a * self.b
    }
}

/// Orthographic projection of a posed body with per-vertex 2D widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projected2D {
    pub joints_2d: Vec<Vector2<f64>>,
    pub vertex_2d: Vec<Vector2<f64>>,
    /// Distance of each vertex to its part's 2D bone line.
    pub widths_2d: Vec<f64>,
    /// 2D length of each part's central bone.
    pub bone_lengths_2d: Vec<f64>,
    pub part_of_vertex: Vec<usize>,
    pub bone_of_part: Vec<(usize, usize)>,
    /// Centre of the affine warp (pixels).
    pub center: Vector2<f64>,
}

/// Distance from `p` to the line through `a`, `b`; distance to `a` when the
/// points coincide.
pub fn line_distance_2d(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let d = b - a;
    let e = p - a;
    let len = d.norm();
    if len < DEGENERATE_BONE {
        return e.norm();
    }
    (d.x * e.y - d.y * e.x).abs() / len
}

impl Projected2D {
    fn from_points(
        joints_2d: Vec<Vector2<f64>>,
        vertex_2d: Vec<Vector2<f64>>,
        part_of_vertex: Vec<usize>,
        bone_of_part: Vec<(usize, usize)>,
        center: Vector2<f64>,
    ) -> Self {
        let widths_2d = vertex_2d
            .iter()
            .zip(&part_of_vertex)
            .map(|(v, &j)| {
                let (a, b) = bone_of_part[j];
                line_distance_2d(v, &joints_2d[a], &joints_2d[b])
            })
            .collect();
        let bone_lengths_2d = bone_of_part
            .iter()
            .map(|&(a, b)| (joints_2d[b] - joints_2d[a]).norm())
            .collect();
        Projected2D {
            joints_2d,
            vertex_2d,
            widths_2d,
            bone_lengths_2d,
            part_of_vertex,
            bone_of_part,
            center,
        }
    }

    /// Largest gap between stored and recomputed widths.
    pub fn width_consistency(&self) -> f64 {
        self.vertex_2d
            .iter()
            .zip(&self.part_of_vertex)
            .zip(&self.widths_2d)
            .map(|((v, &j), w)| {
                let (a, b) = self.bone_of_part[j];
                (line_distance_2d(v, &self.joints_2d[a], &self.joints_2d[b]) - w).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Orthographic projection; the warp centre is the camera offset.
pub fn project(
    model: &BodyModel,
    decomp: &PartDecomposition,
    posed_mesh: &[Vector3<f64>],
    posed_joints: &[Vector3<f64>],
    cam: &OrthoCamera,
) -> Result<Projected2D> {
    if posed_mesh.len() != model.num_vertices() {
        return Err(Error::Dimension {
            what: "mesh vertices",
            expected: model.num_vertices(),
            got: posed_mesh.len(),
        });
    }
    if posed_joints.len() != model.num_joints() {
        return Err(Error::Dimension {
            what: "joints",
            expected: model.num_joints(),
            got: posed_joints.len(),
        });
    }
    Ok(Projected2D::from_points(
        posed_joints.iter().map(|p| cam.project(p)).collect(),
        posed_mesh.iter().map(|p| cam.project(p)).collect(),
        decomp.part_of_vertex().to_vec(),
        decomp.bone_of_part().to_vec(),
        cam.offset,
    ))
}

/// Warps every point about the centre and re-measures widths and lengths.
pub fn transform_2d(p: &Projected2D, aug: &AffineAugment) -> Projected2D {
    let t = aug.matrix();
    let warp = |q: &Vector2<f64>| p.center + t * (q - p.center);
    Projected2D::from_points(
        p.joints_2d.iter().map(warp).collect(),
        p.vertex_2d.iter().map(warp).collect(),
        p.part_of_vertex.clone(),
        p.bone_of_part.clone(),
        p.center,
    )
}

/// Warped 2D bone length of every part.
fn warped_bone_lengths(p: &Projected2D, aug: &AffineAugment) -> Result<Vec<f64>> {
    let t = aug.matrix();
    let mut used = vec![false; p.bone_of_part.len()];
    p.part_of_vertex.iter().for_each(|&j| used[j] = true);
    p.bone_of_part
        .iter()
        .enumerate()
        .map(|(part, &(a, b))| {
            let l = (t * (p.joints_2d[b] - p.joints_2d[a])).norm();
            if used[part] && l < DEGENERATE_BONE_PX {
                Err(Error::DegenerateBone2D { part })
            } else {
                Ok(l)
            }
        })
        .collect()
}

/// Closed-form post-warp vertex widths `w̄ = ab · l / l̄ · w`.
pub fn derive_widths_2d(p: &Projected2D, aug: &AffineAugment) -> Result<Vec<f64>> {
    let warped = warped_bone_lengths(p, aug)?;
    Ok(p
        .widths_2d
        .iter()
        .zip(&p.part_of_vertex)
        .map(|(w, &j)| aug.det() * p.bone_lengths_2d[j] / warped[j] * w)
        .collect())
}

/// Post-warp 3D slice widths: each part scales by `(s / s̄) · ab · l / l̄`
/// where `s`, `s̄` are the px/m scales before and after the warp.
pub fn derive_widths_3d(desc: &ShapeDescriptor, p: &Projected2D, aug: &AffineAugment, s: f64, s_bar: f64) -> Result<Vec<f64>> {
    if !(s > 0.0 && s_bar > 0.0 && s.is_finite() && s_bar.is_finite()) {
        return Err(Error::InvalidArgument(format!("scales must be positive, got s={s}, s_bar={s_bar}")));
    }
    if desc.num_parts() != p.bone_of_part.len() {
        return Err(Error::Dimension {
            what: "parts",
            expected: p.bone_of_part.len(),
            got: desc.num_parts(),
        });
    }
    let warped = warped_bone_lengths(p, aug)?;
    let n = desc.n();
    Ok(desc
        .slice_widths()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let j = i / n;
            (s / s_bar) * aug.det() * p.bone_lengths_2d[j] / warped[j] * w
        })
        .collect())
}

/// Posed skeleton whose bones keep their depth extent while their image-plane
/// extent reproduces the warped 2D bones under `cam_after`. The root keeps
/// its depth and lands on its warped 2D position.
pub fn stretch_skeleton_to_projection(
    model: &BodyModel,
    posed_joints: &[Vector3<f64>],
    before: &Projected2D,
    after: &Projected2D,
    cam_after: &OrthoCamera,
) -> Result<Vertices> {
    let nj = model.num_joints();
    for (what, got) in [
        ("joints", posed_joints.len()),
        ("projected joints", before.joints_2d.len()),
        ("warped joints", after.joints_2d.len()),
    ] {
        if got != nj {
            return Err(Error::Dimension { what, expected: nj, got });
        }
    }
    let s_bar = cam_after.scale;
    let mut out = posed_joints.to_vec();
    let root = model.root();
    let r2 = (after.joints_2d[root] - cam_after.offset) / s_bar;
    out[root] = Vector3::new(r2.x, r2.y, posed_joints[root].z);
    for &j in model.topo_order() {
        let Some(p) = model.parents()[j] else { continue };
        let d = posed_joints[j] - posed_joints[p];
        let target = after.joints_2d[j] - after.joints_2d[p];
        let seen = (before.joints_2d[j] - before.joints_2d[p]).norm();
        if seen < DEGENERATE_BONE_PX && target.norm() > UNSOLVABLE_TOL_PX {
            return Err(Error::Unsolvable {
                joint: j,
                target_px: target.norm(),
            });
        }
        let planar = target / s_bar;
        out[j] = out[p] + Vector3::new(planar.x, planar.y, d.z);
    }
    Ok(out)
}

/// Bone lengths (indexed like [`BodyModel::bones`]) of
/// [`stretch_skeleton_to_projection`].
pub fn stretch_bones_to_projection(
    model: &BodyModel,
    posed_joints: &[Vector3<f64>],
    before: &Projected2D,
    after: &Projected2D,
    cam_after: &OrthoCamera,
) -> Result<Vec<f64>> {
    let x = stretch_skeleton_to_projection(model, posed_joints, before, after, cam_after)?;
    Ok(crate::decompose::bone_lengths(model, &x))
}
