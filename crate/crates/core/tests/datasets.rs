//! Loading the bundled Adult and Bank Marketing CSVs.

use std::path::PathBuf;

use splitleak::attack::{ConfigurationSpace, DEFAULT_CANDIDATE_CAP};
use splitleak::data::{load_csv, FeatureSchema, VocabPolicy};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn check(name: &str, rows: usize, space: usize, positive: (f64, f64)) {
    let schema = FeatureSchema::from_file(data_dir().join(format!("{name}.schema"))).unwrap();
    let data = load_csv(data_dir().join(format!("{name}.csv")), &schema, VocabPolicy::Strict).unwrap();
    assert_eq!(data.len(), rows);
    let rate = data.positive_rate();
    assert!(rate > positive.0 && rate < positive.1, "{name} positive rate {rate}");
    assert_eq!(
        ConfigurationSpace::from_schema(&schema, DEFAULT_CANDIDATE_CAP)
            .unwrap()
            .len(),
        space
    );
    for (i, f) in schema.features().iter().enumerate() {
        if let (Some(card), Some(vocab)) = (f.kind.cardinality(), data.vocabulary(i)) {
            assert_eq!(vocab.len(), card, "{name}.{}", f.name);
        }
    }
}

#[test]
fn adult_loads() {
    check("adult", 48_842, 840, (0.23, 0.25));
}

#[test]
fn bank_loads() {
    check("bank", 45_211, 3456, (0.11, 0.125));
}
