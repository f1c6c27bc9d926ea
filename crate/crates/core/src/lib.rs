//! Part-based human shape toolkit.
//!
//! A body shape is described by the lengths of the skeleton bones and the
//! mean widths of each body part cut into `n` slices along its central bone.
//! This crate provides:
//!
//! - [`model`]: a linear-PCA, linear-blend-skinned body model (SMPL layout),
//!   its neutral on-disk format and a synthetic capsule-chain fixture;
//! - [`decompose`]: part segmentation, slicing and descriptor extraction;
//! - [`reconstruct`]: the analytical stretch-and-broaden reconstruction, the
//!   residual MLP refiner, its losses and its trainer;
//! - [`augment`]: annotation geometry for affine image augmentation;
//! - [`convert`]: closed-form least-squares conversion between body models;
//! - [`eval`]: the noise-robustness harness and V2V metric;
//! - [`io`]: OBJ, CSV and descriptor file helpers.

pub mod augment;
pub mod convert;
pub mod decompose;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod reconstruct;

pub use augment::{AffineAugment, OrthoCamera, Projected2D};
pub use convert::{ConversionResult, PointRegressor};
pub use decompose::{PartDecomposition, ShapeDescriptor};
pub use error::{Error, Result};
pub use eval::{EvalReport, NoiseSpec};
pub use model::{BodyModel, Pose, ShapeCoeffs};
pub use reconstruct::{AnalyticalResult, LossWeights, RefinerKind, RefinerNet};

/// A mesh or point set: one 3-vector per vertex, meters.
pub type Vertices = Vec<nalgebra::Vector3<f64>>;
