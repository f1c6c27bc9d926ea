use nalgebra::{DVector, Vector2, Vector3};

use super::analytical::stretch_skeleton;
use super::LossWeights;
use crate::decompose::{bone_param, PartDecomposition, ShapeDescriptor, DEGENERATE_BONE};
use crate::error::{Error, Result};
use crate::model::{regress_joints, shape_to_mesh, BodyModel, ShapeCoeffs};
use crate::Vertices;

/// Target of the decompose loss: a descriptor and the template skeleton
/// stretched to its bone lengths.
#[derive(Clone, Debug)]
pub struct DecompTarget {
    pub descriptor: ShapeDescriptor,
    pub keypoints: Vertices,
    /// Central-bone length of every part on the stretched skeleton.
    pub part_lengths: Vec<f64>,
}

impl DecompTarget {
    pub fn new(model: &BodyModel, decomp: &PartDecomposition, descriptor: ShapeDescriptor) -> Result<Self> {
        descriptor.check_layout(model, decomp)?;
        let keypoints = stretch_skeleton(model, decomp.template_joints(), descriptor.bone_lengths())?;
        let part_lengths = decomp
            .bone_of_part()
            .iter()
            .map(|&(a, b)| (keypoints[b] - keypoints[a]).norm())
            .collect();
        Ok(DecompTarget {
            descriptor,
            keypoints,
            part_lengths,
        })
    }
}

#[derive(Clone, Debug)]
pub struct DecompLoss {
    pub total: f64,
    pub bone: f64,
    pub width: f64,
    pub regulariser: f64,
    /// Gradient of `total` with respect to the refined coefficients.
    pub grad: Vec<f64>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Shape-decompose loss of refined coefficients against a target descriptor.
///
/// The bone term is the L1 distance between root-relative keypoints plus the
/// L1 bone-length error. The width term is the squared width error plus the
/// squared error of each width divided by its part's bone length. The
/// regulariser is `mu1 * |beta|²`.
pub fn decompose_loss(
    model: &BodyModel,
    decomp: &PartDecomposition,
    refined: &ShapeCoeffs,
    target: &DecompTarget,
    weights: &LossWeights,
) -> Result<DecompLoss> {
    target.descriptor.check_layout(model, decomp)?;
    let mesh = shape_to_mesh(model, refined)?;
    let joints = regress_joints(model, &mesh)?;
    let root = model.root();
    let nj = model.num_joints();
    let mut g_joint = vec![Vector3::<f64>::zeros(); nj];
    let mut g_mesh = vec![Vector3::<f64>::zeros(); mesh.len()];

    let mut bone = 0.0;
    for j in 0..nj {
        if j == root {
            continue;
        }
        let r = (joints[j] - joints[root]) - (target.keypoints[j] - target.keypoints[root]);
        bone += r.abs().sum();
        let s = r.map(sign);
        g_joint[j] += s;
        g_joint[root] -= s;
    }
    for (&(p, c), &l_hat) in model.bones().iter().zip(target.descriptor.bone_lengths()) {
        let d = joints[c] - joints[p];
        let l = d.norm();
        bone += (l - l_hat).abs();
        if l > DEGENERATE_BONE {
            let u = d / l * sign(l - l_hat);
            g_joint[c] += u;
            g_joint[p] -= u;
        }
    }

    let n = decomp.n();
    let mut width = 0.0;
    for (part, &(a, b)) in decomp.bone_of_part().iter().enumerate() {
        let axis = joints[b] - joints[a];
        let len = axis.norm();
        if len < DEGENERATE_BONE {
            return Err(Error::ZeroLengthBone { bone: (a, b) });
        }
        let l_hat = target.part_lengths[part];
        let mut g_len = 0.0;
        for slice in 0..n {
            let cell = decomp.cell(part, slice);
            let w_hat = target.descriptor.slice_widths()[part * n + slice];
            let per_vertex: Vec<(usize, f64, Vector3<f64>)> = cell
                .iter()
                .map(|&k| {
                    let t = bone_param(&mesh[k], &joints[a], &joints[b]);
                    let off = mesh[k] - (joints[a] + axis * t);
                    (k, t, off)
                })
                .collect();
            let w = per_vertex.iter().map(|(_, _, off)| off.norm()).sum::<f64>() / cell.len() as f64;
            let e_abs = w - w_hat;
            let e_rel = w / len - w_hat / l_hat;
            width += e_abs * e_abs + e_rel * e_rel;
            let g_w = 2.0 * e_abs + 2.0 * e_rel / len;
            g_len += -2.0 * e_rel * w / (len * len);
            let c = g_w / cell.len() as f64;
            for (k, t, off) in per_vertex {
                let dist = off.norm();
                if dist > 0.0 {
                    let nh = off / dist * c;
                    g_mesh[k] += nh;
                    g_joint[a] -= nh * (1.0 - t);
                    g_joint[b] -= nh * t;
                }
            }
        }
        let u = axis / len * g_len;
        g_joint[b] += u;
        g_joint[a] -= u;
    }

    for (j, row) in model.regressor_rows().iter().enumerate() {
        for &(k, r) in row {
            g_mesh[k] += g_joint[j] * r;
        }
    }
    let flat = DVector::from_iterator(3 * g_mesh.len(), g_mesh.iter().flat_map(|g| [g.x, g.y, g.z]));
    let mut grad: Vec<f64> = model.shape_basis().tr_mul(&flat).iter().copied().collect();
    let beta = refined.as_slice();
    let regulariser = beta.iter().map(|b| b * b).sum::<f64>();
    for (g, b) in grad.iter_mut().zip(beta) {
        *g += 2.0 * weights.mu1 * b;
    }
    Ok(DecompLoss {
        total: bone + width + weights.mu1 * regulariser,
        bone,
        width,
        regulariser,
        grad,
    })
}

/// Shape loss between predicted and target 2D widths: the squared error of
/// the slice widths plus `mu0` times the squared error of per-vertex widths.
pub fn shape_loss(
    pred_widths: &[f64],
    target_widths: &[f64],
    pred_vertex_widths: &[Vector2<f64>],
    target_vertex_widths: &[Vector2<f64>],
    weights: &LossWeights,
) -> Result<f64> {
    if pred_widths.len() != target_widths.len() {
        return Err(Error::Dimension {
            what: "slice widths",
            expected: target_widths.len(),
            got: pred_widths.len(),
        });
    }
    if pred_vertex_widths.len() != target_vertex_widths.len() {
        return Err(Error::Dimension {
            what: "vertex widths",
            expected: target_vertex_widths.len(),
            got: pred_vertex_widths.len(),
        });
    }
    let slice: f64 = pred_widths.iter().zip(target_widths).map(|(p, t)| (p - t).powi(2)).sum();
    let vertex: f64 = pred_vertex_widths
        .iter()
        .zip(target_vertex_widths)
        .map(|(p, t)| (p - t).norm_squared())
        .sum();
    Ok(slice + weights.mu0 * vertex)
}
