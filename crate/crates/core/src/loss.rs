//! Supervised cross-entropy shared by every training objective.

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>, TensorError> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(TensorError::Invalid {
                op: "one_hot",
                msg: format!("label {l} out of range for {classes} classes"),
            });
        }
        data[i * classes + l] = T::one();
    }
    Tensor::from_vec(&[labels.len(), classes], data)
}

/// `−mean_i log σ(logits_i)[y_i]` with σ the softmax.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>, TensorError> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() || labels.is_empty() {
        return Err(TensorError::Invalid {
            op: "cross_entropy",
            msg: format!("logits {:?} with {} labels", logits.shape(), labels.len()),
        });
    }
    let target = one_hot(labels, logits.shape()[1])?;
    logits
        .softmax()?
        .log()?
        .mul(&target)?
        .sum_all()?
        .scale(T::lit(-1.0 / labels.len() as f64))
}
