//! Datasets: image domains, synthetic lane-change sequences, labeling and
//! subsampling.

pub mod glyphs;
pub mod images;
pub mod sequences;

pub use images::{make_rotated_domain, ImageDataset};
pub use sequences::{
    generate_toy_lane_changes, generate_toy_pair, label_and_weight, GeneratorConfig, LabelConfig, LabeledSequence,
    Maneuver, ManeuverEvent, ToyDomain,
};

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng;

/// First `b` entries of a seed-determined permutation of `0..len`.
/// Prefixes are nested: the `b1` subset is contained in the `b2` subset for `b1 < b2`.
pub fn limit_indices(len: usize, b: usize, seed: u64) -> Result<Vec<usize>> {
    if b > len {
        return Err(Error::LimitTooLarge { requested: b, available: len });
    }
    let mut perm = rng::permutation(len, &mut rng::stream(seed, "limit"));
    perm.truncate(b);
    Ok(perm)
}

/// Limits a dataset to `b` samples; see [`limit_indices`].
pub fn limit_dataset<T: Clone>(ds: &[T], b: usize, seed: u64) -> Result<Vec<T>> {
    Ok(limit_indices(ds.len(), b, seed)?.into_iter().map(|i| ds[i].clone()).collect())
}

/// Seed-determined train/test partition of `0..len`; `test_fraction` of the
/// samples (rounded down, at least one when `len > 1`) go to the test side.
pub fn split_indices(len: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let perm = rng::permutation(len, &mut rng::stream(seed, "split"));
    let mut n_test = (len as f64 * test_fraction) as usize;
    if n_test == 0 && len > 1 && test_fraction > 0.0 {
        n_test = 1;
    }
    let test = perm[..n_test].to_vec();
    let train = perm[n_test..].to_vec();
    (train, test)
}
