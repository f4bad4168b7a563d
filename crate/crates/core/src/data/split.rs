use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Disjoint, covering train/test row ids. Both lists are in shuffled order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded shuffle of `0..n_rows`, first `round(ratio * n_rows)` ids to train.
/// The result depends only on `(n_rows, ratio, seed)`.
pub fn split_train_test(n_rows: usize, ratio: f64, seed: u64) -> Result<SplitIndices> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split ratio must lie in (0,1), got {ratio}"
        )));
    }
    let mut ids: Vec<usize> = (0..n_rows).collect();
    rng::shuffle(&mut ids, &mut rng::stream(seed, Stream::Split));
    let n_train = (ratio * n_rows as f64).round() as usize;
    let test = ids.split_off(n_train.min(n_rows));
    Ok(SplitIndices { train: ids, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_rows_nine_one() {
        let s = split_train_test(10, 0.9, 0).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (9, 1));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = split_train_test(1000, 0.9, 5).unwrap();
        assert_eq!(a, split_train_test(1000, 0.9, 5).unwrap());
        let b = split_train_test(1000, 0.9, 6).unwrap();
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn bad_ratio() {
        assert!(split_train_test(10, 1.0, 0).is_err());
        assert!(split_train_test(10, 0.0, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn disjoint_covering(n in 1usize..2000, seed in 0u64..1000) {
            let s = split_train_test(n, 0.9, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let expected = 0.9 * n as f64;
            proptest::prop_assert!((s.train.len() as f64 - expected).abs() <= 1.0);
        }
    }
}
