use crate::error::TensorError;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::FeatureQueue;

/// Where a pair's source row comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceRef {
    Batch(usize),
    Queue(usize),
}

/// Label-matched `(source, target)` pairs; a row of the cross-correlation
/// batch per pair. Instances may repeat across pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairIndex {
    pub pairs: Vec<(SourceRef, usize)>,
}

impl PairIndex {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Keeps a uniform random subset of `cap` pairs, preserving order.
    pub fn subsample(&mut self, cap: usize, rng: &mut SeededRng) {
        if self.pairs.len() <= cap {
            return;
        }
        let mut keep = rng.permutation(self.pairs.len());
        keep.truncate(cap);
        keep.sort_unstable();
        self.pairs = keep.into_iter().map(|i| self.pairs[i]).collect();
    }

    pub fn target_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(_, t)| t).collect()
    }

    /// Pair rows for the source side: batch rows stay differentiable through
    /// `z_batch`, queue rows enter as constants.
    pub fn source_rows<T: Scalar>(
        &self,
        z_batch: &Tensor<T>,
        queue: &FeatureQueue<T>,
    ) -> Result<Tensor<T>, TensorError> {
        let b = self.pairs.len();
        let dim = z_batch.shape()[1];
        let batch_idx: Vec<Option<usize>> = self
            .pairs
            .iter()
            .map(|(s, _)| match s {
                SourceRef::Batch(i) => Some(*i),
                SourceRef::Queue(_) => None,
            })
            .collect();
        let from_batch = gather_rows(z_batch, &batch_idx)?;
        if self.pairs.iter().all(|(s, _)| matches!(s, SourceRef::Batch(_))) {
            return Ok(from_batch);
        }
        let mut constant = vec![T::zero(); b * dim];
        for (row, (s, _)) in constant.chunks_mut(dim).zip(&self.pairs) {
            if let SourceRef::Queue(q) = s {
                row.copy_from_slice(queue.row(*q));
            }
        }
        from_batch.add(&Tensor::from_vec(&[b, dim], constant)?)
    }

    pub fn target_rows<T: Scalar>(&self, z_target: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let idx: Vec<Option<usize>> = self.pairs.iter().map(|&(_, t)| Some(t)).collect();
        gather_rows(z_target, &idx)
    }
}

/// Row gather expressed as a one-hot selection matmul; `None` yields a zero row.
pub fn gather_rows<T: Scalar>(z: &Tensor<T>, idx: &[Option<usize>]) -> Result<Tensor<T>, TensorError> {
    let n = z.shape()[0];
    let mut sel = vec![T::zero(); idx.len() * n];
    for (r, i) in idx.iter().enumerate() {
        if let Some(i) = *i {
            if i >= n {
                return Err(TensorError::Invalid {
                    op: "gather_rows",
                    msg: format!("row {i} out of range for {n} rows"),
                });
            }
            sel[r * n + i] = T::one();
        }
    }
    Tensor::from_vec(&[idx.len(), n], sel)?.matmul(z)
}

/// Every (source, target) with `source label == target pseudo-label`.
///
/// Sources are the in-batch labels followed by the queue labels; order is
/// source-major with ascending indices on both sides.
pub fn build_pairs(batch_labels: &[usize], queue_labels: &[usize], target_labels: &[usize]) -> PairIndex {
    let sources = batch_labels
        .iter()
        .enumerate()
        .map(|(i, &l)| (SourceRef::Batch(i), l))
        .chain(queue_labels.iter().enumerate().map(|(i, &l)| (SourceRef::Queue(i), l)));
    let mut pairs = Vec::new();
    for (src, label) in sources {
        for (t, &pl) in target_labels.iter().enumerate() {
            if pl == label {
                pairs.push((src, t));
            }
        }
    }
    PairIndex { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerates_equal_labels() {
        let p = build_pairs(&[0, 1], &[], &[1, 1, 0]);
        assert_eq!(
            p.pairs,
            vec![(SourceRef::Batch(0), 2), (SourceRef::Batch(1), 0), (SourceRef::Batch(1), 1)]
        );
    }

    #[test]
    fn disjoint_labels_are_empty() {
        assert!(build_pairs(&[0, 0], &[1], &[2, 3]).is_empty());
    }

    #[test]
    fn queue_entry_adds_one_pair_per_matching_target() {
        let without = build_pairs(&[1], &[], &[0, 1, 0]);
        let with = build_pairs(&[1], &[0], &[0, 1, 0]);
        assert_eq!(with.len(), without.len() + 2);
        assert_eq!(&with.pairs[without.len()..], &[(SourceRef::Queue(0), 0), (SourceRef::Queue(0), 2)]);
    }

    #[test]
    fn subsample_caps_and_keeps_order() {
        let mut p = build_pairs(&[0; 10], &[], &[0; 10]);
        let mut rng = SeededRng::new(3);
        p.subsample(17, &mut rng);
        assert_eq!(p.len(), 17);
        assert!(p.pairs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn gathered_rows_mix_batch_and_queue() {
        let z = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut q = FeatureQueue::new(4, 2);
        q.push(&Tensor::from_vec(&[1, 2], vec![9.0, 8.0]).unwrap(), &[0], 0);
        let p = PairIndex {
            pairs: vec![(SourceRef::Queue(0), 0), (SourceRef::Batch(1), 0), (SourceRef::Batch(0), 1)],
        };
        assert_eq!(p.source_rows(&z, &q).unwrap().to_vec(), vec![9.0, 8.0, 3.0, 4.0, 1.0, 2.0]);
        assert_eq!(p.target_rows(&z).unwrap().to_vec(), vec![1.0, 2.0, 1.0, 2.0, 3.0, 4.0]);
    }
}
