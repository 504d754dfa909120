//! Deterministic 7:1:2 dataset splitting.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sizes under the floor rule: `floor(0.7 n)` train, `floor(0.1 n)` val,
/// remainder test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 7 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

/// Deterministic seeded shuffle, then assignment in shuffle order. The
/// returned vector is aligned with the input order.
pub fn split_dataset(sample_ids: &[String], seed: u64) -> Result<Vec<Split>> {
    if sample_ids.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty id list".into()));
    }
    let n = sample_ids.len();
    let (n_train, n_val, _) = split_sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut out = vec![Split::Test; n];
    for (rank, &idx) in order.iter().enumerate() {
        out[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:05}")).collect()
    }

    fn counts(splits: &[Split]) -> (usize, usize, usize) {
        let t = splits.iter().filter(|s| **s == Split::Train).count();
        let v = splits.iter().filter(|s| **s == Split::Val).count();
        let e = splits.iter().filter(|s| **s == Split::Test).count();
        (t, v, e)
    }

    #[test]
    fn ten_samples_split_exactly() {
        let splits = split_dataset(&ids(10), 7).unwrap();
        assert_eq!(counts(&splits), (7, 1, 2));
    }

    #[test]
    fn floor_rule_on_full_corpus_size() {
        assert_eq!(split_sizes(13871), (9709, 1387, 2775));
        assert_eq!(split_sizes(512), (358, 51, 103));
        let splits = split_dataset(&ids(13871), 0).unwrap();
        assert_eq!(counts(&splits), (9709, 1387, 2775));
    }

    #[test]
    fn same_seed_is_identical_and_different_seed_is_not() {
        let a = split_dataset(&ids(100), 11).unwrap();
        let b = split_dataset(&ids(100), 11).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&ids(100), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_input_is_invalid() {
        assert!(split_dataset(&[], 0).is_err());
    }

    #[test]
    fn assignment_is_exhaustive_and_disjoint_by_construction() {
        let splits = split_dataset(&ids(23), 5).unwrap();
        assert_eq!(splits.len(), 23);
        let (t, v, e) = counts(&splits);
        assert_eq!(t + v + e, 23);
        assert_eq!((t, v, e), (16, 2, 5));
    }
}
