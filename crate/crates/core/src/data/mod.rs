//! Synthetic benchmark data, epoch batching and the on-disk split cache.

pub mod cache;
mod synth;

pub use synth::{
    generate_split, motion_template_class, Dataset, Domain, ShiftLevel, ShiftSpec, Split, SynthConfig,
    VideoSample,
};

use crate::rng::SeededRng;

/// Shuffled index batches for one epoch; the last batch may be short.
pub fn batch_iterator(len: usize, batch_size: usize, seed: u64, stream: u64, epoch: usize) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut rng = SeededRng::stream(seed ^ (epoch as u64).wrapping_mul(0xA24B_AED4_963E_E407), stream);
    rng.permutation(len)
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect()
}
