//! Shape recovery from a part descriptor.
//!
//! [`analytical_reconstruct`] stretches the template skeleton to the target
//! bone lengths, broadens every part slice to the target width, blends the
//! per-part results with the skinning weights and projects the deformation
//! onto the shape basis. [`refine`] then corrects the coefficients with a
//! small MLP trained on the shape-decompose loss.

mod analytical;
mod loss;
mod net;
mod train;

use serde::{Deserialize, Serialize};

pub use analytical::{analytical_reconstruct, stretch_skeleton, AnalyticalResult, AnalyticalSolver, PROJECTION_RIDGE};
pub use loss::{decompose_loss, shape_loss, DecompLoss, DecompTarget};
pub use net::{refine, Gradients, RefinerKind, RefinerNet, HIDDEN_SIZE, LEAKY_SLOPE, NUM_LAYERS};
pub use train::{train_refiner, Optimizer, TrainConfig};

/// Loss weights. `mu0` weights the per-vertex term of the shape loss,
/// `mu1` the coefficient regulariser of the decompose loss; `mu2` and `mu3`
/// weight the decompose and shape losses in the full training objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mu0: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            mu0: 0.01,
            mu1: 0.01,
            mu2: 0.1,
            mu3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> crate::Result<()> {
        if [self.mu0, self.mu1, self.mu2, self.mu3].iter().all(|m| *m >= 0.0 && m.is_finite()) {
            Ok(())
        } else {
            Err(crate::Error::InvalidArgument("loss weights must be finite and >= 0".into()))
        }
    }
}
