//! Shared fixtures: a synthetic dataset shaped like Adult on the client side
//! (cardinalities 2·5·6·7 with a binary label, |L| = 840).

use splitleak::data::{generate_synthetic, split_train_test, Dataset, FeatureSchema, FeatureSpec, Side, SplitIndices};
use splitleak::nn::{Architecture, ClientModel, ServerModel};
use splitleak::protocol::{init_models, ServerView};

pub fn adult_like_schema() -> FeatureSchema {
    FeatureSchema::new(vec![
        FeatureSpec::numeric("age", Side::Server),
        FeatureSpec::categorical("workclass", 9, Side::Server),
        FeatureSpec::categorical("education", 16, Side::Server),
        FeatureSpec::categorical("occupation", 15, Side::Server),
        FeatureSpec::numeric("hours_per_week", Side::Server),
        FeatureSpec::categorical("sex", 2, Side::Client),
        FeatureSpec::categorical("race", 5, Side::Client),
        FeatureSpec::categorical("relationship", 6, Side::Client),
        FeatureSpec::categorical("marital_status", 7, Side::Client),
        FeatureSpec::label("income"),
    ])
    .expect("valid schema")
}

pub fn dataset(rows: usize) -> (Dataset, SplitIndices) {
    let data = generate_synthetic(&adult_like_schema(), rows, 0.24, 42).expect("synthetic data");
    let split = split_train_test(data.len(), 0.9, 42).expect("split");
    (data, split)
}

/// Seed-42 models with the default architecture.
pub fn models(data: &Dataset, split: &SplitIndices) -> (ServerModel, ClientModel) {
    let scalers = ServerView::from_dataset(data).fit_scalers(&split.train);
    init_models(data.schema(), scalers, &Architecture::default(), 42).expect("models")
}
