//! Labeled/unlabeled/validation split bookkeeping.

use alloc::vec::Vec;
use libm::round;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::rng::{Purpose, Stream};

/// Disjoint id lists for one partition protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub labeled_ids: Vec<u32>,
    pub unlabeled_ids: Vec<u32>,
    pub val_ids: Vec<u32>,
    /// Labeled fraction as (numerator, denominator), e.g. (1, 16).
    pub label_fraction: (u32, u32),
}

impl SplitManifest {
    pub fn is_disjoint(&self) -> bool {
        let mut seen = alloc::collections::BTreeSet::new();
        self.labeled_ids
            .iter()
            .chain(&self.unlabeled_ids)
            .chain(&self.val_ids)
            .all(|id| seen.insert(*id))
    }
}

/// Partition train ids `0..num_train` into labeled and unlabeled sets.
/// Labeled count is `max(1, round(fraction * num_train))`.
pub fn make_splits(num_train: usize, fraction: (u32, u32), seed: u64) -> Result<SplitManifest> {
    if fraction.1 == 0 || fraction.0 == 0 {
        return Err(config_err!("label fraction must be positive, got {fraction:?}"));
    }
    if fraction.0 > fraction.1 {
        return Err(config_err!("label fraction {fraction:?} exceeds 1"));
    }
    if num_train == 0 {
        return Err(config_err!("num_train must be positive"));
    }
    let frac = fraction.0 as f64 / fraction.1 as f64;
    let labeled_count = (round(frac * num_train as f64) as usize).clamp(1, num_train);

    let mut ids: Vec<u32> = (0..num_train as u32).collect();
    let mut rng = Stream::new(seed, Purpose::Split, 0);
    rng.shuffle(&mut ids);

    let labeled: Vec<u32> = {
        let mut v = ids[..labeled_count].to_vec();
        v.sort_unstable();
        v
    };
    let unlabeled: Vec<u32> = {
        let mut v = ids[labeled_count..].to_vec();
        v.sort_unstable();
        v
    };
    Ok(SplitManifest {
        labeled_ids: labeled,
        unlabeled_ids: unlabeled,
        val_ids: Vec::new(),
        label_fraction: fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_sixteenth_of_160_is_10() {
        let m = make_splits(160, (1, 16), 5).unwrap();
        assert_eq!(m.labeled_ids.len(), 10);
        assert_eq!(m.unlabeled_ids.len(), 150);
        assert!(m.is_disjoint());
    }

    #[test]
    fn full_supervision_leaves_no_unlabeled() {
        let m = make_splits(160, (1, 1), 5).unwrap();
        assert_eq!(m.labeled_ids.len(), 160);
        assert!(m.unlabeled_ids.is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            make_splits(100, (1, 8), 3).unwrap(),
            make_splits(100, (1, 8), 3).unwrap()
        );
        assert_ne!(
            make_splits(100, (1, 8), 3).unwrap(),
            make_splits(100, (1, 8), 4).unwrap()
        );
    }

    #[test]
    fn zero_fraction_rejected() {
        assert!(make_splits(100, (0, 8), 3).is_err());
    }

    #[test]
    fn exact_counts_for_standard_fractions() {
        for &(n, d) in &[(1u32, 16u32), (1, 8), (1, 4), (1, 2), (1, 1)] {
            let m = make_splits(160, (n, d), 9).unwrap();
            let expect = (round(160.0 * n as f64 / d as f64) as usize).max(1);
            assert_eq!(m.labeled_ids.len(), expect);
            assert!(m.is_disjoint());
        }
    }
}
