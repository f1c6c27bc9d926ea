//! Linear-PCA, linear-blend-skinned body model.
//!
//! The layout follows SMPL: a template mesh, a shape basis mapping
//! coefficients to per-vertex offsets, per-vertex blend weights, a joint
//! regressor and a kinematic tree. Pose-dependent correctives are not
//! modelled.

mod format;
mod toy;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vertices;

pub use format::{load_model, save_model};
pub use toy::{make_toy_fixture, make_toy_model, ToyFixture, TOY_LENGTH_GAIN, TOY_SHAPE_DIM, TOY_WIDTH_GAIN};

const BLEND_SUM_TOL: f64 = 1e-6;
const REGRESSOR_SUM_TOL: f64 = 1e-5;

/// How the central bone of each body part is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartBoneRule {
    /// Part `j` uses `(parent(j), j)`; the root part uses `(root, first child)`.
    #[default]
    ParentToJoint,
    /// Part `j` uses `(j, first child of j)`; leaves fall back to `(parent(j), j)`.
    JointToChild,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PartBones {
    Rule(PartBoneRule),
    Explicit(Vec<[usize; 2]>),
}

impl Default for PartBones {
    fn default() -> Self {
        PartBones::Rule(PartBoneRule::ParentToJoint)
    }
}

/// Raw arrays used to build a [`BodyModel`].
#[derive(Clone, Debug)]
pub struct BodyModelParts {
    pub name: String,
    pub template: Vertices,
    /// `3K x s`, row `3k + c` holds coordinate `c` of vertex `k`.
    pub shape_basis: DMatrix<f64>,
    /// `K x J`.
    pub blend_weights: DMatrix<f64>,
    /// `J x K`.
    pub joint_regressor: DMatrix<f64>,
    pub parents: Vec<Option<usize>>,
    pub faces: Vec<[u32; 3]>,
    pub part_bones: PartBones,
}

/// Immutable body model. Shareable across threads.
#[derive(Clone, Debug)]
pub struct BodyModel {
    parts: BodyModelParts,
    root: usize,
    topo_order: Vec<usize>,
    bones: Vec<(usize, usize)>,
    part_bones: Vec<(usize, usize)>,
    regressor_rows: Vec<Vec<(usize, f64)>>,
    skin_rows: Vec<Vec<(usize, f64)>>,
}

impl BodyModel {
    /// Validates every invariant and precomputes the kinematic order.
    pub fn new(parts: BodyModelParts) -> Result<Self> {
        let k = parts.template.len();
        let s = parts.shape_basis.ncols();
        let j = parts.parents.len();
        if k == 0 {
            return Err(Error::invariant("template", "no vertices"));
        }
        if j == 0 {
            return Err(Error::invariant("parents", "no joints"));
        }
        check_shape("shape_basis", (3 * k, s), parts.shape_basis.shape())?;
        check_shape("blend_weights", (k, j), parts.blend_weights.shape())?;
        check_shape("joint_regressor", (j, k), parts.joint_regressor.shape())?;

        if parts.template.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::invariant("template", "non-finite coordinate"));
        }
        if !parts.shape_basis.iter().all(|x| x.is_finite()) {
            return Err(Error::invariant("shape_basis", "non-finite entry"));
        }
        for (row_idx, row) in parts.blend_weights.row_iter().enumerate() {
            if row.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(Error::invariant(
                    "blend_weights",
                    format!("row {row_idx} has a negative or non-finite weight"),
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > BLEND_SUM_TOL {
                return Err(Error::invariant(
                    "blend_weights",
                    format!("row {row_idx} sums to {sum}"),
                ));
            }
        }
        for (row_idx, row) in parts.joint_regressor.row_iter().enumerate() {
            if row.iter().any(|w| !w.is_finite()) {
                return Err(Error::invariant(
                    "joint_regressor",
                    format!("row {row_idx} has a non-finite entry"),
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > REGRESSOR_SUM_TOL {
                return Err(Error::invariant(
                    "joint_regressor",
                    format!("row {row_idx} sums to {sum}"),
                ));
            }
        }
        for (fi, face) in parts.faces.iter().enumerate() {
            if face.iter().any(|&v| v as usize >= k) {
                return Err(Error::invariant(
                    "faces",
                    format!("face {fi} references a vertex >= {k}"),
                ));
            }
        }

        let (root, topo_order) = kinematic_order(&parts.parents)?;
        let bones: Vec<(usize, usize)> = (0..j)
            .filter_map(|c| parts.parents[c].map(|p| (p, c)))
            .collect();
        let part_bones = resolve_part_bones(&parts.part_bones, &parts.parents, root)?;

        let regressor_rows = sparse_rows(&parts.joint_regressor);
        let skin_rows = sparse_rows(&parts.blend_weights)
            .into_iter()
            .map(|row| {
                let total: f64 = row.iter().map(|(_, w)| w).sum();
                row.into_iter().map(|(c, w)| (c, w / total)).collect()
            })
            .collect();

        Ok(BodyModel {
            parts,
            root,
            topo_order,
            bones,
            part_bones,
            regressor_rows,
            skin_rows,
        })
    }

    pub fn name(&self) -> &str {
        &self.parts.name
    }

    pub fn num_vertices(&self) -> usize {
        self.parts.template.len()
    }

    pub fn num_joints(&self) -> usize {
        self.parts.parents.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.parts.shape_basis.ncols()
    }

    pub fn template(&self) -> &[Vector3<f64>] {
        &self.parts.template
    }

    pub fn shape_basis(&self) -> &DMatrix<f64> {
        &self.parts.shape_basis
    }

    pub fn blend_weights(&self) -> &DMatrix<f64> {
        &self.parts.blend_weights
    }

    pub fn joint_regressor(&self) -> &DMatrix<f64> {
        &self.parts.joint_regressor
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parts.parents
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.parts.faces
    }

    pub fn part_bone_spec(&self) -> &PartBones {
        &self.parts.part_bones
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Joints ordered so that every parent precedes its children.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    /// `(parent, child)` for every non-root joint, in child index order.
    /// Bone length vectors are indexed the same way.
    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    /// Central bone `(a, b)` of every part.
    pub fn part_bones(&self) -> &[(usize, usize)] {
        &self.part_bones
    }

    /// Non-zero joint regressor entries per joint.
    pub fn regressor_rows(&self) -> &[Vec<(usize, f64)>] {
        &self.regressor_rows
    }

    /// Non-zero blend weights per vertex, renormalised to sum to one.
    pub fn skin_rows(&self) -> &[Vec<(usize, f64)>] {
        &self.skin_rows
    }

    pub fn into_parts(self) -> BodyModelParts {
        self.parts
    }

    pub fn parts(&self) -> &BodyModelParts {
        &self.parts
    }
}

fn check_shape(field: &str, expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::ShapeMismatch {
            field: field.to_string(),
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        });
    }
    Ok(())
}

fn sparse_rows(m: &DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
    m.row_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(c, &w)| (c, w))
                .collect()
        })
        .collect()
}

fn kinematic_order(parents: &[Option<usize>]) -> Result<(usize, Vec<usize>)> {
    let j = parents.len();
    let roots: Vec<usize> = (0..j).filter(|&i| parents[i].is_none()).collect();
    if roots.len() != 1 {
        return Err(Error::invariant(
            "parents",
            format!("expected exactly one root, found {}", roots.len()),
        ));
    }
    let mut children = vec![Vec::new(); j];
    for (c, p) in parents.iter().enumerate() {
        if let Some(p) = *p {
            if p >= j {
                return Err(Error::invariant(
                    "parents",
                    format!("joint {c} has parent {p} >= {j}"),
                ));
            }
            children[p].push(c);
        }
    }
    let mut order = Vec::with_capacity(j);
    let mut stack = vec![roots[0]];
    while let Some(node) = stack.pop() {
        order.push(node);
        stack.extend(children[node].iter().rev());
    }
    if order.len() != j {
        return Err(Error::invariant("parents", "kinematic tree contains a cycle"));
    }
    Ok((roots[0], order))
}

fn first_child(parents: &[Option<usize>], joint: usize) -> Option<usize> {
    parents.iter().position(|&p| p == Some(joint))
}

fn resolve_part_bones(
    spec: &PartBones,
    parents: &[Option<usize>],
    root: usize,
) -> Result<Vec<(usize, usize)>> {
    let j = parents.len();
    match spec {
        PartBones::Explicit(list) => {
            if list.len() != j {
                return Err(Error::ShapeMismatch {
                    field: "part_bones".into(),
                    expected: j.to_string(),
                    found: list.len().to_string(),
                });
            }
            list.iter()
                .enumerate()
                .map(|(part, &[a, b])| {
                    if a >= j || b >= j || a == b {
                        Err(Error::invariant(
                            "part_bones",
                            format!("part {part} has invalid bone ({a}, {b})"),
                        ))
                    } else {
                        Ok((a, b))
                    }
                })
                .collect()
        }
        PartBones::Rule(rule) => {
            if j < 2 {
                return Err(Error::invariant("parents", "need at least two joints"));
            }
            let root_bone = first_child(parents, root)
                .map(|c| (root, c))
                .ok_or_else(|| Error::invariant("parents", "root has no children"))?;
            Ok((0..j)
                .map(|part| match (rule, parents[part]) {
                    (_, None) => root_bone,
                    (PartBoneRule::ParentToJoint, Some(p)) => (p, part),
                    (PartBoneRule::JointToChild, Some(p)) => first_child(parents, part)
                        .map(|c| (part, c))
                        .unwrap_or((p, part)),
                })
                .collect())
        }
    }
}

/// PCA shape coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShapeCoeffs(Vec<f64>);

impl ShapeCoeffs {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if let Some(i) = beta.iter().position(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "shape coefficient {i} is not finite"
            )));
        }
        Ok(ShapeCoeffs(beta))
    }

    pub fn zeros(s: usize) -> Self {
        ShapeCoeffs(vec![0.0; s])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|b| b * b).sum::<f64>().sqrt()
    }
}

/// Per-joint axis-angle rotations plus a global translation.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    rotations: Vec<Vector3<f64>>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Angles are wrapped into `[0, 2π)` along their axis.
    pub fn new(rotations: Vec<Vector3<f64>>, translation: Vector3<f64>) -> Result<Self> {
        let finite = |v: &Vector3<f64>| v.iter().all(|x| x.is_finite());
        if !rotations.iter().all(finite) || !finite(&translation) {
            return Err(Error::InvalidArgument("pose has non-finite entries".into()));
        }
        let tau = std::f64::consts::TAU;
        let rotations = rotations
            .into_iter()
            .map(|r| {
                let angle = r.norm();
                if angle >= tau {
                    r * (angle.rem_euclid(tau) / angle)
                } else {
                    r
                }
            })
            .collect();
        Ok(Pose {
            rotations,
            translation,
        })
    }

    pub fn identity(num_joints: usize) -> Self {
        Pose {
            rotations: vec![Vector3::zeros(); num_joints],
            translation: Vector3::zeros(),
        }
    }

    pub fn rotations(&self) -> &[Vector3<f64>] {
        &self.rotations
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }
}

fn axis_angle_matrix(r: &Vector3<f64>) -> Matrix3<f64> {
    if r.iter().all(|&x| x == 0.0) {
        Matrix3::identity()
    } else {
        Rotation3::from_scaled_axis(*r).into_inner()
    }
}

/// Rest-pose mesh `template + S·beta`.
pub fn shape_to_mesh(model: &BodyModel, beta: &ShapeCoeffs) -> Result<Vertices> {
    let s = model.shape_dim();
    if beta.len() != s {
        return Err(Error::Dimension {
            what: "shape coefficients",
            expected: s,
            got: beta.len(),
        });
    }
    let offsets = model.shape_basis() * DVector::from_column_slice(beta.as_slice());
    Ok(model
        .template()
        .iter()
        .enumerate()
        .map(|(k, t)| t + Vector3::new(offsets[3 * k], offsets[3 * k + 1], offsets[3 * k + 2]))
        .collect())
}

/// Joint positions `R·mesh`.
pub fn regress_joints(model: &BodyModel, mesh: &[Vector3<f64>]) -> Result<Vertices> {
    if mesh.len() != model.num_vertices() {
        return Err(Error::Dimension {
            what: "mesh vertices",
            expected: model.num_vertices(),
            got: mesh.len(),
        });
    }
    Ok(model
        .regressor_rows()
        .iter()
        .map(|row| row.iter().fold(Vector3::zeros(), |acc, &(k, w)| acc + mesh[k] * w))
        .collect())
}

/// World rotation and position of every joint after forward kinematics.
#[derive(Clone, Debug)]
pub struct Skeleton {
    pub rotations: Vec<Matrix3<f64>>,
    pub positions: Vertices,
}

/// Forward kinematics of the rest skeleton under `pose`.
pub fn pose_skeleton(model: &BodyModel, rest_joints: &[Vector3<f64>], pose: &Pose) -> Result<Skeleton> {
    let j = model.num_joints();
    if rest_joints.len() != j {
        return Err(Error::Dimension {
            what: "rest joints",
            expected: j,
            got: rest_joints.len(),
        });
    }
    if pose.rotations().len() != j {
        return Err(Error::Dimension {
            what: "pose rotations",
            expected: j,
            got: pose.rotations().len(),
        });
    }
    let mut rotations = vec![Matrix3::identity(); j];
    let mut positions = vec![Vector3::zeros(); j];
    for &joint in model.topo_order() {
        let local = axis_angle_matrix(&pose.rotations()[joint]);
        match model.parents()[joint] {
            None => {
                rotations[joint] = local;
                positions[joint] = rest_joints[joint] + pose.translation();
            }
            Some(p) => {
                rotations[joint] = rotations[p] * local;
                positions[joint] = rotations[p] * (rest_joints[joint] - rest_joints[p]) + positions[p];
            }
        }
    }
    Ok(Skeleton {
        rotations,
        positions,
    })
}

/// Linear blend skinning of a rest mesh.
pub fn pose_mesh(model: &BodyModel, rest_mesh: &[Vector3<f64>], pose: &Pose) -> Result<Vertices> {
    let rest_joints = regress_joints(model, rest_mesh)?;
    let skeleton = pose_skeleton(model, &rest_joints, pose)?;
    // Blend displacements rather than positions so the identity pose is exact.
    let rot_minus_id: Vec<Matrix3<f64>> = skeleton
        .rotations
        .iter()
        .map(|r| r - Matrix3::identity())
        .collect();
    let shift: Vec<Vector3<f64>> = skeleton
        .positions
        .iter()
        .zip(&rest_joints)
        .map(|(w, r)| w - r)
        .collect();
    Ok(rest_mesh
        .iter()
        .zip(model.skin_rows())
        .map(|(v, row)| {
            let disp = row.iter().fold(Vector3::zeros(), |acc, &(j, w)| {
                acc + (rot_minus_id[j] * (v - rest_joints[j]) + shift[j]) * w
            });
            v + disp
        })
        .collect())
}
