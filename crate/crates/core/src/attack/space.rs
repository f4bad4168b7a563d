use serde::{Deserialize, Serialize};

use crate::data::{EncodedSample, FeatureSchema};
use crate::error::{Error, Result};

/// Default refusal threshold for `|L|`.
pub const DEFAULT_CANDIDATE_CAP: u64 = 1_000_000;

/// One element of the configuration space: a category per private client
/// feature plus a label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateConfiguration {
    pub features: Vec<u32>,
    pub label: u8,
}

impl CandidateConfiguration {
    /// The client-side truth of a dataset row.
    pub fn from_sample(schema: &FeatureSchema, sample: &EncodedSample) -> Self {
        Self {
            features: schema
                .client_features()
                .into_iter()
                .map(|i| sample.category(i))
                .collect(),
            label: sample.label,
        }
    }
}

/// Cartesian product of the private feature categories and the two labels,
/// in lexicographic order with the label varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationSpace {
    names: Vec<String>,
    cardinalities: Vec<usize>,
    label_name: String,
    feature_configs: usize,
}

impl ConfigurationSpace {
    pub fn new(names: Vec<String>, cardinalities: Vec<usize>, label_name: &str, cap: u64) -> Result<Self> {
        if names.len() != cardinalities.len() {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                actual: cardinalities.len(),
                context: "feature names vs cardinalities",
            });
        }
        if cardinalities.contains(&0) {
            return Err(Error::Schema("client feature with zero categories".into()));
        }
        let size = cardinalities
            .iter()
            .try_fold(2u128, |acc, &c| acc.checked_mul(c as u128))
            .unwrap_or(u128::MAX);
        if size > cap as u128 {
            return Err(Error::EnumerationCap { size, cap });
        }
        Ok(Self {
            feature_configs: (size / 2) as usize,
            names,
            cardinalities,
            label_name: label_name.to_string(),
        })
    }

    pub fn from_schema(schema: &FeatureSchema, cap: u64) -> Result<Self> {
        let idx = schema.client_features();
        let names = idx.iter().map(|&i| schema.feature(i).name.clone()).collect();
        Self::new(names, schema.client_cardinalities(), schema.label_name(), cap)
    }

    /// `|L|`
    pub fn len(&self) -> usize {
        self.feature_configs * 2
    }

    pub fn is_empty(&self) -> bool {
        self.feature_configs == 0
    }

    /// Number of feature combinations, ignoring the label.
    pub fn feature_configs(&self) -> usize {
        self.feature_configs
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    /// Writes the feature part of combination `fi` into `out`.
    pub fn decode_features(&self, mut fi: usize, out: &mut [u32]) {
        for (slot, &c) in out.iter_mut().zip(&self.cardinalities).rev() {
            *slot = (fi % c) as u32;
            fi /= c;
        }
    }

    pub fn configuration(&self, index: usize) -> CandidateConfiguration {
        let mut features = vec![0; self.cardinalities.len()];
        self.decode_features(index / 2, &mut features);
        CandidateConfiguration {
            features,
            label: (index % 2) as u8,
        }
    }

    pub fn index_of(&self, config: &CandidateConfiguration) -> Option<usize> {
        if config.features.len() != self.cardinalities.len() || config.label > 1 {
            return None;
        }
        let mut fi = 0usize;
        for (&v, &c) in config.features.iter().zip(&self.cardinalities) {
            if v as usize >= c {
                return None;
            }
            fi = fi * c + v as usize;
        }
        Some(fi * 2 + config.label as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = CandidateConfiguration> + '_ {
        (0..self.len()).map(|i| self.configuration(i))
    }
}

/// The ordered list `L` for a schema's private features.
pub fn enumerate_configurations(schema: &FeatureSchema, cap: u64) -> Result<Vec<CandidateConfiguration>> {
    Ok(ConfigurationSpace::from_schema(schema, cap)?.iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSpec, Side};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn schema(cards: &[usize]) -> FeatureSchema {
        let mut f: Vec<FeatureSpec> = vec![FeatureSpec::numeric("s", Side::Server)];
        for (i, &c) in cards.iter().enumerate() {
            f.push(FeatureSpec::categorical(&format!("c{i}"), c, Side::Client));
        }
        f.push(FeatureSpec::label("y"));
        FeatureSchema::new(f).unwrap()
    }

    #[test]
    fn sizes() {
        assert_eq!(
            enumerate_configurations(&schema(&[2]), DEFAULT_CANDIDATE_CAP)
                .unwrap()
                .len(),
            4
        );
        let adult = ConfigurationSpace::from_schema(&schema(&[2, 5, 6, 7]), DEFAULT_CANDIDATE_CAP).unwrap();
        assert_eq!(adult.len(), 840);
        let bank = ConfigurationSpace::from_schema(&schema(&[3, 12, 4, 2, 2, 3]), DEFAULT_CANDIDATE_CAP).unwrap();
        assert_eq!(bank.len(), 3456);
    }

    #[test]
    fn lexicographic_with_label_fastest() {
        let l = enumerate_configurations(&schema(&[2, 3]), DEFAULT_CANDIDATE_CAP).unwrap();
        let head: Vec<(Vec<u32>, u8)> = l.iter().take(4).map(|c| (c.features.clone(), c.label)).collect();
        assert_eq!(
            head,
            vec![(vec![0, 0], 0), (vec![0, 0], 1), (vec![0, 1], 0), (vec![0, 1], 1)]
        );
        assert_eq!(l.last().unwrap().features, vec![1, 2]);
    }

    #[test]
    fn cap_is_enforced_and_named() {
        let err = ConfigurationSpace::from_schema(&schema(&[100, 100, 100]), 1000).unwrap_err();
        match err {
            Error::EnumerationCap { size, cap } => {
                assert_eq!(size, 2_000_000);
                assert_eq!(cap, 1000);
            }
            e => panic!("unexpected {e}"),
        }
        let text = err_text(&schema(&[100, 100, 100]));
        assert!(text.contains("2000000") && text.contains("cap of 10"), "{text}");
    }

    fn err_text(s: &FeatureSchema) -> String {
        ConfigurationSpace::from_schema(s, 10).unwrap_err().to_string()
    }

    proptest! {
        #[test]
        fn every_configuration_once(cards in proptest::collection::vec(1usize..5, 1..4)) {
            let space = ConfigurationSpace::from_schema(&schema(&cards), DEFAULT_CANDIDATE_CAP).unwrap();
            let all: Vec<_> = space.iter().collect();
            prop_assert_eq!(all.len(), 2 * cards.iter().product::<usize>());
            let unique: HashSet<_> = all.iter().cloned().collect();
            prop_assert_eq!(unique.len(), all.len());
            for (i, c) in all.iter().enumerate() {
                prop_assert_eq!(space.index_of(c), Some(i));
            }
        }
    }
}
