use rand::seq::SliceRandom;

use super::corpus::Dataset;
use crate::error::{invalid, Result};
use crate::seed::rng_for;

/// Seeded shuffle of `0..n`; the first `floor(n * train_fraction)` indices
/// are the training side.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!("train_fraction {train_fraction} must lie in (0, 1)")));
    }
    if n < 2 {
        return Err(invalid(format!("cannot split {n} examples")));
    }
    let cut = (n as f64 * train_fraction).floor() as usize;
    if cut == 0 || cut == n {
        return Err(invalid(format!(
            "split of {n} examples at fraction {train_fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, "split", 0));
    let test = order.split_off(cut);
    Ok((order, test))
}

pub fn split_dataset(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.len(), train_fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn seventy_thirty() {
        let (tr, te) = split_indices(10, 0.7, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (7, 3));
        assert_eq!(split_indices(10, 0.7, 3).unwrap(), (tr, te));
    }

    #[test]
    fn seeds_differ() {
        let a: BTreeSet<_> = split_indices(100, 0.7, 1).unwrap().0.into_iter().collect();
        let b: BTreeSet<_> = split_indices(100, 0.7, 2).unwrap().0.into_iter().collect();
        assert!(a.symmetric_difference(&b).count() > 0);
    }

    #[test]
    fn degenerate_rejected() {
        assert!(split_indices(1, 0.5, 0).is_err());
        assert!(split_indices(3, 0.2, 0).is_err());
        assert!(split_indices(10, 1.0, 0).is_err());
        assert!(split_indices(10, 0.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn exact_partition(n in 2usize..300, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let cut = (n as f64 * frac).floor() as usize;
            prop_assume!(cut > 0 && cut < n);
            let (tr, te) = split_indices(n, frac, seed).unwrap();
            prop_assert_eq!(tr.len() + te.len(), n);
            let all: BTreeSet<_> = tr.iter().chain(&te).copied().collect();
            prop_assert_eq!(all.len(), n);
        }
    }
}
