use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, FeatureValue, Vocabulary};
use super::schema::FeatureKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinStrategy {
    EqualWidth,
    Quantile,
}

/// Interior bin boundaries; value `x` falls in bin `#{b : b <= x}` (the
/// equal-width top edge is folded into the last bin).
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    pub edges: Vec<f64>,
}

impl BinEdges {
    pub fn fit(values: &[f64], n_bins: usize, strategy: BinStrategy) -> std::result::Result<Self, &'static str> {
        let mut sorted: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if sorted.is_empty() {
            return Err("no finite values");
        }
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let edges = match strategy {
            BinStrategy::EqualWidth => {
                let width = (hi - lo) / n_bins as f64;
                (1..n_bins).map(|j| lo + width * j as f64).collect()
            }
            BinStrategy::Quantile => {
                if lo == hi {
                    return Err("constant column");
                }
                (1..n_bins)
                    .map(|j| {
                        // lower empirical quantile at j/n
                        let pos = (j * sorted.len()) / n_bins;
                        sorted[pos.min(sorted.len() - 1)]
                    })
                    .collect()
            }
        };
        Ok(Self { edges })
    }

    pub fn bin(&self, x: f64) -> u32 {
        self.edges.partition_point(|&e| e <= x) as u32
    }
}

/// Re-encodes numeric `feature` as `categorical(n_bins)` with boundaries
/// fitted on `reference` rows only (pass the training split).
pub fn bin_numeric(
    dataset: &Dataset,
    feature: usize,
    n_bins: usize,
    strategy: BinStrategy,
    reference: &[usize],
) -> Result<Dataset> {
    let spec = dataset.schema().feature(feature);
    if spec.kind != FeatureKind::Numeric {
        return Err(Error::InvalidConfig(format!("`{}` is not numeric", spec.name)));
    }
    if n_bins < 2 {
        return Err(Error::InvalidConfig(format!("n_bins must be >= 2, got {n_bins}")));
    }
    let values: Vec<f64> = reference.iter().map(|&r| dataset.row(r).number(feature)).collect();
    let edges = BinEdges::fit(&values, n_bins, strategy).map_err(|why| match why {
        "constant column" => Error::DegenerateBins(spec.name.clone()),
        other => Error::InvalidConfig(format!("`{}`: {other}", spec.name)),
    })?;

    let schema = dataset.schema().with_kind(feature, FeatureKind::Categorical(n_bins))?;
    let (_, mut vocabularies, mut rows) = dataset.clone().into_parts();
    let bounds: Vec<String> = std::iter::once(f64::NEG_INFINITY)
        .chain(edges.edges.iter().copied())
        .chain(std::iter::once(f64::INFINITY))
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| format!("[{},{})", w[0], w[1]))
        .collect();
    vocabularies[feature] = Some(Vocabulary::new(bounds));
    for row in &mut rows {
        let x = row.number(feature);
        if !x.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "`{}` has missing values; impute before binning",
                spec.name
            )));
        }
        row.values[feature] = FeatureValue::Category(edges.bin(x));
    }
    Dataset::new(schema, vocabularies, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{FeatureSchema, FeatureSpec, Side};
    use crate::data::synthetic::uniform_numeric_dataset;

    #[test]
    fn equal_width_hand_computed() {
        let edges = BinEdges::fit(&[1.0, 2.0, 3.0, 4.0], 2, BinStrategy::EqualWidth).unwrap();
        let bins: Vec<u32> = [1.0, 2.0, 3.0, 4.0].iter().map(|&x| edges.bin(x)).collect();
        assert_eq!(bins, vec![0, 0, 1, 1]);
    }

    #[test]
    fn quantile_populations_balanced() {
        let ds = uniform_numeric_dataset(10_000, 7);
        let all: Vec<usize> = (0..ds.len()).collect();
        let binned = bin_numeric(&ds, 0, 4, BinStrategy::Quantile, &all).unwrap();
        let mut counts = [0usize; 4];
        for r in binned.rows() {
            counts[r.category(0) as usize] += 1;
        }
        let mean = 2500.0;
        for c in counts {
            assert!((c as f64 - mean).abs() / mean < 0.05, "{counts:?}");
        }
    }

    #[test]
    fn rejects_single_bin_and_constants() {
        let ds = uniform_numeric_dataset(10, 1);
        let all: Vec<usize> = (0..ds.len()).collect();
        assert!(matches!(
            bin_numeric(&ds, 0, 1, BinStrategy::EqualWidth, &all),
            Err(Error::InvalidConfig(_))
        ));
        let constant = BinEdges::fit(&[3.0; 20], 4, BinStrategy::Quantile);
        assert!(constant.is_err());
    }

    #[test]
    fn binned_feature_becomes_categorical() {
        let schema = FeatureSchema::new(vec![
            FeatureSpec::numeric("x", Side::Server),
            FeatureSpec::categorical("c", 2, Side::Client),
            FeatureSpec::label("y"),
        ])
        .unwrap();
        let ds = crate::data::synthetic::generate_synthetic(&schema, 100, 0.5, 3).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        let binned = bin_numeric(&ds, 0, 3, BinStrategy::EqualWidth, &all).unwrap();
        assert_eq!(binned.schema().feature(0).kind, FeatureKind::Categorical(3));
        assert!(binned.decode(0, 0).unwrap().starts_with("[-inf"));
    }

    proptest::proptest! {
        #[test]
        fn bins_are_monotone(
            values in proptest::collection::vec(-1e3f64..1e3, 2..200),
            n_bins in 2usize..12,
            quantile in proptest::bool::ANY,
            probes in proptest::collection::vec(-2e3f64..2e3, 2..50),
        ) {
            let strategy = if quantile { BinStrategy::Quantile } else { BinStrategy::EqualWidth };
            let Ok(edges) = BinEdges::fit(&values, n_bins, strategy) else { return Ok(()); };
            let mut probes = probes;
            probes.sort_by(f64::total_cmp);
            for w in probes.windows(2) {
                proptest::prop_assert!(edges.bin(w[0]) <= edges.bin(w[1]));
            }
            for p in probes {
                proptest::prop_assert!((edges.bin(p) as usize) < n_bins);
            }
        }
    }
}
