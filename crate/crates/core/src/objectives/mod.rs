//! Training objectives with gradients: scaled-cosine softmax, AM-Softmax,
//! prototypical loss, classifier feedback, and the supervised
//! context-vector losses (APF, ANF, ADF).

mod classify;
mod context;
mod proto;
mod total;

pub use classify::{am_softmax_loss, softmax_loss, AmSoftmaxConfig, ClassifierOutput};
pub use context::{
    adf_loss, adf_probability, anf_loss, apf_loss, feedback_partition, ContextLossOutput, Feedback,
    FeedbackFlag,
};
pub use proto::{prototypes, prototypical_loss, Episode, ProtoOutput};
pub use total::{total_objective, LossBundle, LossParts, Variant};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm};

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// `a1ᵀ a2 / ‖a2‖`, i.e. `‖a1‖ · cos(a1, a2)`.
pub fn scaled_cosine_distance(a1: &[f64], a2: &[f64]) -> Result<f64> {
    if a1.len() != a2.len() {
        return Err(Error::shape(format!(
            "vectors of length {} and {}",
            a1.len(),
            a2.len()
        )));
    }
    let n = norm(a2);
    if n < ZERO_NORM {
        return Err(Error::invalid(
            "scaled cosine distance against a zero vector",
        ));
    }
    Ok(dot(a1, a2) / n)
}
