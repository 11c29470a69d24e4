//! Cross-domain information-bottleneck alignment: pseudo-labels, label-matched
//! source/target pairs, the source feature queue, the normalized
//! cross-correlation matrix and the redundancy-reduction loss built on it.

mod ib;
mod pairs;
mod queue;

pub use ib::{cross_correlation, ib_loss, recip_clamped, total_loss, CrossCorrelation, DENOM_FLOOR};
pub use pairs::{build_pairs, gather_rows, PairIndex, SourceRef};
pub use queue::{FeatureQueue, QueueEntry};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Argmax class per row (lowest index wins ties) and its softmax probability.
pub fn pseudo_label<T: Scalar>(logits: &Tensor<T>) -> (Vec<usize>, Vec<T>) {
    let k = *logits.shape().last().expect("logits have a class axis");
    let data = logits.data();
    data.chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            let total: T = row.iter().map(|&v| (v - row[best]).exp()).sum();
            (best, T::one() / total)
        })
        .unzip()
}
