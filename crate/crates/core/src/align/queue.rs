use std::collections::VecDeque;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry<T> {
    pub z: Vec<T>,
    pub label: usize,
    pub epoch_tag: usize,
}

/// Fixed-capacity FIFO of detached source projections and their labels.
#[derive(Debug, Clone)]
pub struct FeatureQueue<T: Scalar> {
    capacity: usize,
    dim: usize,
    entries: VecDeque<QueueEntry<T>>,
}

impl<T: Scalar> FeatureQueue<T> {
    pub fn new(capacity: usize, dim: usize) -> Self {
        FeatureQueue {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends rows of `z` (`[B, dim]`) in order, evicting the oldest beyond
    /// capacity. Only values are copied; the graph is never referenced.
    pub fn push(&mut self, z: &Tensor<T>, labels: &[usize], epoch_tag: usize) {
        assert_eq!(z.shape(), [labels.len(), self.dim], "queue push shape");
        if self.capacity == 0 {
            return;
        }
        let data = z.data();
        for (row, &label) in data.chunks(self.dim).zip(labels) {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(QueueEntry {
                z: row.to_vec(),
                label,
                epoch_tag,
            });
        }
    }

    /// Drops entries tagged more than `max_age` epochs before `epoch`.
    pub fn evict_stale(&mut self, epoch: usize, max_age: usize) {
        self.entries.retain(|e| epoch.saturating_sub(e.epoch_tag) <= max_age);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = &QueueEntry<T>> {
        self.entries.iter()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.entries[i].z
    }
}
