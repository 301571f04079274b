use rand::seq::SliceRandom;

use crate::data::TransitionDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Shuffled train/validation index partition. The train side takes
/// `floor(fraction * len)` indices.
pub fn split_indices(len: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    if len < 2 {
        return Err(Error::Config(format!("cannot split {len} transitions")));
    }
    let n_train = (train_fraction * len as f64).floor() as usize;
    if n_train == 0 || n_train == len {
        return Err(Error::Config(format!(
            "fraction {train_fraction} of {len} transitions leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng::root(seed));
    let val = idx.split_off(n_train);
    Ok((idx, val))
}

/// Seeded 80/20-style split of a dataset into (train, validation).
pub fn split_dataset(
    dataset: &TransitionDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(TransitionDataset, TransitionDataset)> {
    let (train, val) = split_indices(dataset.len(), train_fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&val)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_follow_floor_rule() {
        let (t, v) = split_indices(10, 0.8, 1).unwrap();
        assert_eq!((t.len(), v.len()), (8, 2));
        let (t, v) = split_indices(101, 0.5, 1).unwrap();
        assert_eq!((t.len(), v.len()), (50, 51));
    }

    #[test]
    fn disjoint_exhaustive_and_reproducible() {
        let (t, v) = split_indices(57, 0.8, 9).unwrap();
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
        assert_eq!(split_indices(57, 0.8, 9).unwrap(), (t, v));
    }

    #[test]
    fn bad_fractions_are_config_errors() {
        for f in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(split_indices(10, f, 0), Err(Error::Config(_))));
        }
        assert!(split_indices(1, 0.5, 0).is_err());
    }
}
