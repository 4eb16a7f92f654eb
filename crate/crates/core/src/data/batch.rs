use rand::seq::SliceRandom;

use crate::seed;

/// Splits `indices` into shuffled minibatches of `batch_size`; the last
/// batch keeps the remainder. The order depends only on `(seed, epoch)`.
pub fn batches(indices: &[usize], batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order = indices.to_vec();
    order.shuffle(&mut seed::rng_indexed(seed, "batches", epoch));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
