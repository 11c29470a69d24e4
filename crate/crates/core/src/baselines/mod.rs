//! Comparison alignment strategies operating on the same video-level
//! features as the information-bottleneck loss: kernel MMD, a
//! gradient-reversal domain classifier, maximum classifier discrepancy, a
//! cross-domain supervised InfoNCE and a cross-domain VICReg.

mod adversarial;
mod contrastive;
mod mcd;
mod mmd;
mod vicreg;

pub use adversarial::{adversarial_losses, grad_reverse, grl_ramp, AdversarialLoss, DomainClassifier};
pub use contrastive::{infonce_cross_domain_loss, l2_normalize_rows};
pub use mcd::{abs, mcd_discrepancy, mcd_step, McdReport, McdStep};
pub use mmd::{mmd_loss, BANDWIDTH_MULTIPLIERS};
pub use vicreg::{vicreg_cross_domain_loss, VicRegWeights};

use crate::error::TensorError;
use crate::loss::cross_entropy;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Elementwise `exp`, used by the kernel and contrastive losses.
pub fn exp<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let out: Vec<T> = x.data().iter().map(|v| v.exp()).collect();
    let y = out.clone();
    Tensor::from_op("exp", x.shape().to_vec(), out, vec![x.clone()], move |g| {
        vec![Some(g.iter().zip(&y).map(|(&gv, &yv)| gv * yv).collect())]
    })
}

/// Cross-entropy of target logits against their pseudo-labels, scaled by
/// `weight`.
pub fn target_pseudo_ce<T: Scalar>(
    target_logits: &Tensor<T>,
    pseudo_labels: &[usize],
    weight: f64,
) -> Result<Tensor<T>, TensorError> {
    cross_entropy(target_logits, pseudo_labels)?.scale(T::lit(weight))
}
