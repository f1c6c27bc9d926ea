use nalgebra::{Cholesky, DVector, Dyn, Vector3};

use crate::decompose::{bone_param, extract_descriptor, slice_index, PartDecomposition, ShapeDescriptor, DEGENERATE_BONE};
use crate::error::{Error, Result};
use crate::model::{shape_to_mesh, BodyModel, ShapeCoeffs};
use crate::Vertices;

/// Ridge added to the normal equations of the basis projection.
pub const PROJECTION_RIDGE: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct AnalyticalResult {
    /// Stretched and broadened template before projection.
    pub deformed_template: Vertices,
    /// Skeleton stretched to the target bone lengths.
    pub stretched_joints: Vertices,
    pub beta0: ShapeCoeffs,
    /// Descriptor of `shape_to_mesh(beta0)`.
    pub achieved: ShapeDescriptor,
    /// `target - achieved` bone lengths.
    pub delta_l: Vec<f64>,
    /// `target - achieved` slice widths.
    pub delta_w: Vec<f64>,
}

/// Root-outward stretch keeping every template bone direction.
pub fn stretch_skeleton(model: &BodyModel, template_joints: &[Vector3<f64>], bone_lengths: &[f64]) -> Result<Vertices> {
    if bone_lengths.len() != model.bones().len() {
        return Err(Error::Dimension {
            what: "bone lengths",
            expected: model.bones().len(),
            got: bone_lengths.len(),
        });
    }
    // bone index of each child joint
    let mut bone_of_child = vec![usize::MAX; model.num_joints()];
    for (i, &(_, c)) in model.bones().iter().enumerate() {
        bone_of_child[c] = i;
    }
    let mut out = template_joints.to_vec();
    for &j in model.topo_order() {
        if let Some(p) = model.parents()[j] {
            let dir = template_joints[j] - template_joints[p];
            let len = dir.norm();
            if len < DEGENERATE_BONE {
                return Err(Error::ZeroLengthBone { bone: (p, j) });
            }
            out[j] = out[p] + dir * (bone_lengths[bone_of_child[j]] / len);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
struct Contribution {
    weight: f64,
    part: usize,
    along: f64,
    slice: usize,
    radial: Vector3<f64>,
}

/// Precomputed state for repeated analytical reconstructions on one
/// model/decomposition pair.
pub struct AnalyticalSolver<'a> {
    model: &'a BodyModel,
    decomp: &'a PartDecomposition,
    normal: Cholesky<f64, Dyn>,
    contributions: Vec<Vec<Contribution>>,
}

impl<'a> AnalyticalSolver<'a> {
    pub fn new(model: &'a BodyModel, decomp: &'a PartDecomposition) -> Result<Self> {
        let joints = decomp.template_joints();
        for &(a, b) in decomp.bone_of_part() {
            if (joints[b] - joints[a]).norm() < DEGENERATE_BONE {
                return Err(Error::ZeroLengthBone { bone: (a, b) });
            }
        }
        let n = decomp.n();
        let contributions = model
            .template()
            .iter()
            .zip(model.skin_rows())
            .map(|(p, row)| {
                row.iter()
                    .map(|&(part, weight)| {
                        let (a, b) = decomp.bone_of_part()[part];
                        let along = bone_param(p, &joints[a], &joints[b]);
                        let q = joints[a] + (joints[b] - joints[a]) * along;
                        Contribution {
                            weight,
                            part,
                            along,
                            slice: slice_index(along, n),
                            radial: p - q,
                        }
                    })
                    .collect()
            })
            .collect();

        let basis = model.shape_basis();
        let mut gram = basis.tr_mul(basis);
        for i in 0..gram.nrows() {
            gram[(i, i)] += PROJECTION_RIDGE;
        }
        let normal = Cholesky::new(gram).expect("ridge-regularised Gram matrix is positive definite");
        Ok(AnalyticalSolver {
            model,
            decomp,
            normal,
            contributions,
        })
    }

    pub fn model(&self) -> &BodyModel {
        self.model
    }

    pub fn decomposition(&self) -> &PartDecomposition {
        self.decomp
    }

    /// Least-squares coefficients of a rest mesh, `argmin |S b - (mesh - T)|² + λ|b|²`.
    pub fn project(&self, mesh: &[Vector3<f64>]) -> Result<ShapeCoeffs> {
        let template = self.model.template();
        if mesh.len() != template.len() {
            return Err(Error::Dimension {
                what: "mesh vertices",
                expected: template.len(),
                got: mesh.len(),
            });
        }
        let offsets = DVector::from_iterator(
            3 * mesh.len(),
            mesh.iter().zip(template).flat_map(|(p, t)| (p - t).iter().copied().collect::<Vec<_>>()),
        );
        let rhs = self.model.shape_basis().tr_mul(&offsets);
        ShapeCoeffs::new(self.normal.solve(&rhs).iter().copied().collect())
    }

    /// Stretch-and-broaden deformation of the template (before projection).
    pub fn deform(&self, target: &ShapeDescriptor) -> Result<(Vertices, Vertices)> {
        target.check_layout(self.model, self.decomp)?;
        let stretched = stretch_skeleton(self.model, self.decomp.template_joints(), target.bone_lengths())?;
        let n = self.decomp.n();
        let ratios: Vec<f64> = target
            .slice_widths()
            .iter()
            .zip(self.decomp.template_widths())
            .map(|(w, v)| w / v)
            .collect();
        let deformed = self
            .contributions
            .iter()
            .map(|row| {
                row.iter().fold(Vector3::zeros(), |acc, c| {
                    let (a, b) = self.decomp.bone_of_part()[c.part];
                    let axis = stretched[a] + (stretched[b] - stretched[a]) * c.along;
                    acc + (axis + c.radial * ratios[c.part * n + c.slice]) * c.weight
                })
            })
            .collect();
        Ok((deformed, stretched))
    }

    pub fn solve(&self, target: &ShapeDescriptor) -> Result<AnalyticalResult> {
        let (deformed_template, stretched_joints) = self.deform(target)?;
        let beta0 = self.project(&deformed_template)?;
        let mesh = shape_to_mesh(self.model, &beta0)?;
        let achieved = extract_descriptor(self.model, self.decomp, &mesh)?;
        let delta_l = target
            .bone_lengths()
            .iter()
            .zip(achieved.bone_lengths())
            .map(|(t, a)| t - a)
            .collect();
        let delta_w = target
            .slice_widths()
            .iter()
            .zip(achieved.slice_widths())
            .map(|(t, a)| t - a)
            .collect();
        Ok(AnalyticalResult {
            deformed_template,
            stretched_joints,
            beta0,
            achieved,
            delta_l,
            delta_w,
        })
    }

    /// Gradient of the regularised projection objective at `beta`, max-norm.
    pub fn projection_gradient_norm(&self, mesh: &[Vector3<f64>], beta: &ShapeCoeffs) -> f64 {
        let basis = self.model.shape_basis();
        let b = DVector::from_column_slice(beta.as_slice());
        let offsets = DVector::from_iterator(
            3 * mesh.len(),
            mesh.iter()
                .zip(self.model.template())
                .flat_map(|(p, t)| (p - t).iter().copied().collect::<Vec<_>>()),
        );
        let residual = basis * &b - offsets;
        let grad: DVector<f64> = (basis.tr_mul(&residual) + &b * PROJECTION_RIDGE) * 2.0;
        grad.amax()
    }
}

/// One-shot analytical reconstruction.
pub fn analytical_reconstruct(model: &BodyModel, decomp: &PartDecomposition, target: &ShapeDescriptor) -> Result<AnalyticalResult> {
    AnalyticalSolver::new(model, decomp)?.solve(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::build_decomposition;
    use crate::model::{make_toy_fixture, make_toy_model, regress_joints, TOY_WIDTH_GAIN};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn template_descriptor_is_a_fixed_point() {
        let m = make_toy_model(6, 40, 3).unwrap();
        for n in 1..=3 {
            let d = build_decomposition(&m, n).unwrap();
            let target = extract_descriptor(&m, &d, m.template()).unwrap();
            let r = analytical_reconstruct(&m, &d, &target).unwrap();
            assert!(r.beta0.norm() < 1e-6);
            assert!(r.delta_l.iter().chain(&r.delta_w).all(|x| x.abs() < 1e-8));
            for (p, t) in r.deformed_template.iter().zip(m.template()) {
                assert!((p - t).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn doubled_widths_recover_the_width_coefficient() {
        // large fixture: the ridge bias on a coefficient is λ·β / |column|²
        let fx = make_toy_fixture(24, 1024, 5).unwrap();
        let m = &fx.model;
        let d = build_decomposition(m, 1).unwrap();
        let t = extract_descriptor(m, &d, m.template()).unwrap();
        let doubled: Vec<f64> = t.slice_widths().iter().map(|w| 2.0 * w).collect();
        let target = ShapeDescriptor::new(1, t.bone_lengths().to_vec(), doubled).unwrap();
        let r = analytical_reconstruct(m, &d, &target).unwrap();
        let expected = 1.0 / TOY_WIDTH_GAIN;
        assert!((r.beta0.as_slice()[0] - expected).abs() < 1e-6, "{:?}", r.beta0);
        assert!(r.beta0.as_slice()[1..].iter().all(|b| b.abs() < 1e-6));
    }

    #[test]
    fn stretched_skeleton_has_target_lengths_and_directions() {
        let m = make_toy_model(5, 16, 2).unwrap();
        let joints = regress_joints(&m, m.template()).unwrap();
        let lengths = vec![0.5, 0.1, 0.3, 0.9];
        let x = stretch_skeleton(&m, &joints, &lengths).unwrap();
        assert_eq!(x[m.root()], joints[m.root()]);
        for (i, &(p, c)) in m.bones().iter().enumerate() {
            let d = x[c] - x[p];
            assert!((d.norm() - lengths[i]).abs() < 1e-12);
            let t = (joints[c] - joints[p]).normalize();
            assert!((d.normalize() - t).norm() < 1e-12);
        }
        assert!(stretch_skeleton(&m, &joints, &lengths[..2]).is_err());
    }

    #[test]
    fn projection_is_optimal() {
        let m = make_toy_model(6, 32, 8).unwrap();
        let d = build_decomposition(&m, 2).unwrap();
        let solver = AnalyticalSolver::new(&m, &d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let beta: Vec<f64> = (0..m.shape_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mesh = shape_to_mesh(&m, &ShapeCoeffs::new(beta).unwrap()).unwrap();
            let target = extract_descriptor(&m, &d, &mesh).unwrap();
            let r = solver.solve(&target).unwrap();
            assert!(solver.projection_gradient_norm(&r.deformed_template, &r.beta0) < 1e-8);
            let again = solver.solve(&target).unwrap();
            assert_eq!(again.beta0, r.beta0);
        }
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let m = make_toy_model(4, 16, 2).unwrap();
        let d = build_decomposition(&m, 2).unwrap();
        let bad = ShapeDescriptor::new(1, vec![0.3; 3], vec![0.1; 4]).unwrap();
        assert!(matches!(analytical_reconstruct(&m, &d, &bad), Err(Error::Dimension { .. })));
    }
}
