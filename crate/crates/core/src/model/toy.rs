//! Synthetic capsule-chain body with analytically known descriptors.
//!
//! Joint `j` (j >= 1) hangs off joint `j - 1`. Part `j` is a tube of rings
//! around its central bone `(j - 1, j)`; the root part and part 1 share the
//! bone `(0, 1)` and split its tube into two half-shells. Every vertex lies
//! at the part radius from the bone axis and is skinned rigidly to its part.
//!
//! Shape coefficients:
//! - coefficient 0 scales every radial offset by `1 + TOY_WIDTH_GAIN * beta0`,
//!   so every part-slice width scales by that factor and bones are unchanged;
//! - coefficient 1 scales every bone by `1 + TOY_LENGTH_GAIN * beta1` about
//!   the root, widths unchanged;
//! - the remaining coefficients are seeded mixtures of per-bone stretches,
//!   per-part tapers, elliptic flattening and local bulges. The last two are
//!   confined to interior rings, so the joint rings stay centred on the axis.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BodyModel, BodyModelParts, PartBones};
use crate::error::{Error, Result};
use crate::Vertices;

pub const TOY_SHAPE_DIM: usize = 10;
pub const TOY_WIDTH_GAIN: f64 = 0.25;
pub const TOY_LENGTH_GAIN: f64 = 0.1;
const RINGS: usize = 5;
/// Ring positions along each bone, kept off the slice boundaries of n <= 5.
const RING_ALONG: [f64; RINGS] = [0.0, 0.3, 0.52, 0.7, 1.0];

/// The toy model together with its construction ground truth.
#[derive(Clone, Debug)]
pub struct ToyFixture {
    pub model: BodyModel,
    /// Template joint positions by construction.
    pub joints: Vertices,
    /// Tube radius of every part.
    pub radii: Vec<f64>,
    /// Part label of every vertex.
    pub labels: Vec<usize>,
    /// Bone parameter in `[0, 1]` of every vertex along its part's bone.
    pub along: Vec<f64>,
}

struct Sample {
    part: usize,
    ring: usize,
    along: f64,
    angle: f64,
}

pub fn make_toy_model(num_parts: usize, verts_per_part: usize, seed: u64) -> Result<BodyModel> {
    make_toy_fixture(num_parts, verts_per_part, seed).map(|f| f.model)
}

pub fn make_toy_fixture(num_parts: usize, verts_per_part: usize, seed: u64) -> Result<ToyFixture> {
    if num_parts < 2 {
        return Err(Error::InvalidArgument("toy model needs at least 2 parts".into()));
    }
    if verts_per_part < 8 {
        return Err(Error::InvalidArgument("toy model needs at least 8 vertices per part".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = num_parts;

    // skeleton
    let mut joints = vec![Vector3::new(0.0, 1.0, 0.0)];
    for _ in 1..j {
        let dir = Vector3::new(
            rng.random_range(-0.7..0.7),
            -1.0,
            rng.random_range(-0.5..0.5),
        )
        .normalize();
        let length = rng.random_range(0.25..0.4);
        let prev = *joints.last().unwrap();
        joints.push(prev + dir * length);
    }
    let mut radii: Vec<f64> = (0..j).map(|_| rng.random_range(0.06..0.14)).collect();
    // the two half-shells on bone (0, 1) form one tube
    radii[1] = radii[0];
    let bone_of = |part: usize| if part == 0 { (0, 1) } else { (part - 1, part) };
    let frames: Vec<(Vector3<f64>, Vector3<f64>)> = (0..j)
        .map(|part| {
            let (a, b) = bone_of(part);
            perpendicular_frame(&(joints[b] - joints[a]))
        })
        .collect();

    // joint rings need at least two vertices to stay centred
    let end = (verts_per_part / RINGS).max(2);
    let interior = verts_per_part - 2 * end;
    let mut counts = [end; RINGS];
    for (i, c) in counts[1..RINGS - 1].iter_mut().enumerate() {
        *c = interior / 3 + usize::from(i < interior % 3);
    }

    let mut samples = Vec::with_capacity(j * verts_per_part);
    let mut ring_start = vec![[0usize; RINGS]; j];
    for part in 0..j {
        for (ring, &count) in counts.iter().enumerate() {
            ring_start[part][ring] = samples.len();
            let along = RING_ALONG[ring];
            for i in 0..count {
                let frac = (i as f64 + 0.5) / count as f64;
                let angle = match part {
                    0 => PI * frac,
                    1 => PI + PI * frac,
                    _ => TAU * frac,
                };
                samples.push(Sample { part, ring, along, angle });
            }
        }
    }
    let k = samples.len();

    let offset_of = |s: &Sample| {
        let (e1, e2) = frames[s.part];
        (e1 * s.angle.cos() + e2 * s.angle.sin()) * radii[s.part]
    };
    let axis_of = |s: &Sample| {
        let (a, b) = bone_of(s.part);
        joints[a] + (joints[b] - joints[a]) * s.along
    };
    let template: Vertices = samples.iter().map(|s| axis_of(s) + offset_of(s)).collect();

    // Displacement caused by stretching the bones by per-joint factors.
    // Bone `c` is `(c - 1, c)`; an axis point on bone (a, b) moves with every
    // bone above `a` plus a share `along` of bone `b`.
    let stretch = |gains: &[f64], s: &Sample| -> Vector3<f64> {
        let (a, b) = bone_of(s.part);
        let mut d = Vector3::zeros();
        for c in 1..=a {
            d += (joints[c] - joints[c - 1]) * gains[c];
        }
        d + (joints[b] - joints[a]) * (gains[b] * s.along)
    };
    let envelope = |along: f64| 4.0 * along * (1.0 - along);

    let mut basis = DMatrix::zeros(3 * k, TOY_SHAPE_DIM);
    let mut set_column = |col: usize, disp: &dyn Fn(&Sample) -> Vector3<f64>| {
        for (idx, s) in samples.iter().enumerate() {
            let d = disp(s);
            for c in 0..3 {
                basis[(3 * idx + c, col)] = d[c];
            }
        }
    };
    set_column(0, &|s| offset_of(s) * TOY_WIDTH_GAIN);
    let uniform = vec![TOY_LENGTH_GAIN; j];
    set_column(1, &|s| stretch(&uniform, s));
    for col in 2..TOY_SHAPE_DIM {
        let bone_gain: Vec<f64> = (0..j).map(|_| rng.random_range(-0.04..0.04)).collect();
        let mut width_gain: Vec<f64> = (0..j).map(|_| rng.random_range(-0.06..0.06)).collect();
        let mut taper: Vec<f64> = (0..j).map(|_| rng.random_range(-0.05..0.05)).collect();
        width_gain[1] = width_gain[0];
        taper[1] = taper[0];
        let flatten: Vec<f64> = (0..j).map(|_| rng.random_range(-0.1..0.1)).collect();
        let flatten_dir: Vec<f64> = (0..j).map(|_| rng.random_range(0.0..PI)).collect();
        let bulge: Vec<f64> = (0..j).map(|_| rng.random_range(-0.1..0.1)).collect();
        let bulge_at: Vec<f64> = (0..j).map(|_| rng.random_range(0.0..TAU)).collect();
        set_column(col, &|s| {
            let p = s.part;
            let o = offset_of(s);
            let (e1, e2) = frames[p];
            let u = e1 * flatten_dir[p].cos() + e2 * flatten_dir[p].sin();
            let env = envelope(s.along);
            let radial = width_gain[p] + taper[p] * (s.along - 0.5)
                + bulge[p] * env * (2.0 * ((s.angle - bulge_at[p]).cos() - 1.0)).exp();
            stretch(&bone_gain, s) + o * radial + u * (flatten[p] * env * o.dot(&u))
        });
    }

    let mut blend_weights = DMatrix::zeros(k, j);
    for (idx, s) in samples.iter().enumerate() {
        blend_weights[(idx, s.part)] = 1.0;
    }

    // joint rings: 0 <- first rings of parts 0 and 1, 1 <- last rings of
    // parts 0 and 1, j >= 2 <- last ring of part j
    let mut joint_regressor = DMatrix::zeros(j, k);
    let ring_members = |part: usize, ring: usize| ring_start[part][ring]..ring_start[part][ring] + counts[ring];
    for joint in 0..j {
        let members: Vec<usize> = match joint {
            0 => ring_members(0, 0).chain(ring_members(1, 0)).collect(),
            1 => ring_members(0, RINGS - 1).chain(ring_members(1, RINGS - 1)).collect(),
            _ => ring_members(joint, RINGS - 1).collect(),
        };
        let w = 1.0 / members.len() as f64;
        for m in members {
            joint_regressor[(joint, m)] = w;
        }
    }

    let mut faces = Vec::new();
    for part in 0..j {
        let closed = part >= 2;
        for ring in 0..RINGS - 1 {
            zip_rings(
                &samples,
                ring_members(part, ring),
                ring_members(part, ring + 1),
                closed,
                &mut faces,
            );
        }
    }

    let parents = (0..j).map(|c| c.checked_sub(1)).collect();
    let labels = samples.iter().map(|s| s.part).collect();
    let along = samples.iter().map(|s| s.along).collect();
    debug_assert!(samples.iter().all(|s| s.ring < RINGS));
    let model = BodyModel::new(BodyModelParts {
        name: format!("toy-capsule-chain-p{num_parts}-v{verts_per_part}-s{seed}"),
        template,
        shape_basis: basis,
        blend_weights,
        joint_regressor,
        parents,
        faces,
        part_bones: PartBones::default(),
    })?;
    Ok(ToyFixture {
        model,
        joints,
        radii,
        labels,
        along,
    })
}

fn perpendicular_frame(d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let d = d.normalize();
    let helper = if d.x.abs() < 0.9 { Vector3::x() } else { Vector3::z() };
    let e1 = helper.cross(&d).normalize();
    let e2 = d.cross(&e1);
    (e1, e2)
}

/// Triangulates the band between two rings ordered by angle.
fn zip_rings(
    samples: &[Sample],
    lower: std::ops::Range<usize>,
    upper: std::ops::Range<usize>,
    closed: bool,
    faces: &mut Vec<[u32; 3]>,
) {
    let lo: Vec<usize> = lower.collect();
    let up: Vec<usize> = upper.collect();
    let (nl, nu) = (lo.len(), up.len());
    let (steps_l, steps_u) = if closed { (nl, nu) } else { (nl - 1, nu - 1) };
    let (mut i, mut k) = (0usize, 0usize);
    while i < steps_l || k < steps_u {
        let next_l = samples[lo[(i + 1) % nl]].angle + if i + 1 >= nl { TAU } else { 0.0 };
        let next_u = samples[up[(k + 1) % nu]].angle + if k + 1 >= nu { TAU } else { 0.0 };
        let advance_lower = k >= steps_u || (i < steps_l && next_l <= next_u);
        let (a, b) = (lo[i % nl] as u32, up[k % nu] as u32);
        if advance_lower {
            faces.push([a, lo[(i + 1) % nl] as u32, b]);
            i += 1;
        } else {
            faces.push([a, up[(k + 1) % nu] as u32, b]);
            k += 1;
        }
    }
}
