//! Dataset ingestion, schema declaration, categorical encoding, numeric
//! binning, train/test splitting and synthetic data.

mod binning;
mod dataset;
mod schema;
mod split;
mod synthetic;

pub use binning::{bin_numeric, BinEdges, BinStrategy};
pub use dataset::{
    load_csv, load_csv_with_vocab, Dataset, EncodedSample, FeatureValue, VocabPolicy, Vocabulary, UNKNOWN_TOKEN,
};
pub use schema::{FeatureKind, FeatureSchema, FeatureSpec, Side};
pub use split::{split_train_test, SplitIndices};
pub use synthetic::{demo_schema, generate_synthetic, uniform_numeric_dataset};

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn vocabulary_round_trip(tokens in proptest::collection::btree_set("[a-zA-Z?<>=.-]{0,8}", 1..40)) {
            let tokens: Vec<String> = tokens.into_iter().collect();
            let v = Vocabulary::new(tokens.clone());
            for t in &tokens {
                let i = v.encode(t).unwrap();
                prop_assert_eq!(v.decode(i), Some(t.as_str()));
            }
        }
    }
}
