//! Synthetic tabular data with a planted logistic labelling model.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::{Dataset, EncodedSample, FeatureValue, Vocabulary};
use super::schema::{FeatureKind, FeatureSchema, FeatureSpec, Side};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Draws `n_rows` samples from `schema`.
///
/// Categorical values are uniform, numerics standard normal. Each category
/// and each numeric column gets a standard-normal weight; the label is
/// `1[logit + logistic noise > t]` (a Bernoulli draw from the logistic model)
/// with the intercept `t` placed so that exactly `round(positive_rate * n)`
/// rows are positive.
pub fn generate_synthetic(schema: &FeatureSchema, n_rows: usize, positive_rate: f64, seed: u64) -> Result<Dataset> {
    if !(positive_rate > 0.0 && positive_rate < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "positive rate must lie in (0,1), got {positive_rate}"
        )));
    }
    if schema.client_features().is_empty() {
        return Err(Error::Schema("schema has no client features to attack".into()));
    }
    let mut rng = rng::stream(seed, Stream::Synthetic);
    let label = schema.label_index();

    let weights: Vec<Vec<f64>> = schema
        .features()
        .iter()
        .enumerate()
        .map(|(i, f)| match f.kind {
            _ if i == label => Vec::new(),
            FeatureKind::Categorical(c) => (0..c).map(|_| StandardNormal.sample(&mut rng)).collect(),
            FeatureKind::Numeric => vec![StandardNormal.sample(&mut rng)],
        })
        .collect();

    let mut values = Vec::with_capacity(n_rows);
    let mut scores = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let mut row = Vec::with_capacity(schema.len());
        let mut logit = 0.0;
        for (i, f) in schema.features().iter().enumerate() {
            match f.kind {
                _ if i == label => row.push(FeatureValue::Category(0)),
                FeatureKind::Categorical(c) => {
                    let k = rng.random_range(0..c);
                    logit += weights[i][k];
                    row.push(FeatureValue::Category(k as u32));
                }
                FeatureKind::Numeric => {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    logit += weights[i][0] * x;
                    row.push(FeatureValue::Number(x));
                }
            }
        }
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        scores.push(logit + (u / (1.0 - u)).ln());
        values.push(row);
    }

    let n_pos = (positive_rate * n_rows as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut labels = vec![0u8; n_rows];
    for &i in &order[..n_pos] {
        labels[i] = 1;
    }

    let rows = values
        .into_iter()
        .zip(labels)
        .map(|(mut values, y)| {
            values[label] = FeatureValue::Category(y as u32);
            EncodedSample { values, label: y }
        })
        .collect();
    let vocabularies = schema
        .features()
        .iter()
        .map(|f| {
            f.kind
                .cardinality()
                .map(|c| Vocabulary::new((0..c).map(|k| format!("{}_{k}", f.name)).collect()))
        })
        .collect();
    Dataset::new(schema.clone(), vocabularies, rows)
}

/// Small mixed schema used by tests and the self-test: three server features
/// and two private client features.
pub fn demo_schema() -> FeatureSchema {
    FeatureSchema::new(vec![
        FeatureSpec::categorical("s_cat_a", 4, Side::Server),
        FeatureSpec::numeric("s_num_a", Side::Server),
        FeatureSpec::categorical("s_cat_b", 3, Side::Server),
        FeatureSpec::categorical("c_cat_a", 3, Side::Client),
        FeatureSpec::categorical("c_cat_b", 2, Side::Client),
        FeatureSpec::label("y"),
    ])
    .expect("valid demo schema")
}

/// One numeric server column drawn uniform(0,1), plus a binary client feature
/// and label; a fixture for binning.
pub fn uniform_numeric_dataset(n_rows: usize, seed: u64) -> Dataset {
    let schema = FeatureSchema::new(vec![
        FeatureSpec::numeric("x", Side::Server),
        FeatureSpec::categorical("c", 2, Side::Client),
        FeatureSpec::label("y"),
    ])
    .expect("valid fixture schema");
    let mut rng = rng::stream(seed, Stream::Synthetic);
    let rows = (0..n_rows)
        .map(|i| EncodedSample {
            values: vec![
                FeatureValue::Number(rng.random::<f64>()),
                FeatureValue::Category((i % 2) as u32),
                FeatureValue::Category(0),
            ],
            label: 0,
        })
        .collect();
    let vocab = |n: &str| Some(Vocabulary::new(vec![format!("{n}0"), format!("{n}1")]));
    Dataset::new(schema, vec![None, vocab("c"), vocab("y")], rows).expect("valid fixture")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_rate() {
        let ds = generate_synthetic(&demo_schema(), 10_000, 0.5, 1).unwrap();
        assert!((ds.positive_rate() - 0.5).abs() <= 0.02);
    }

    #[test]
    fn skewed_rate() {
        let ds = generate_synthetic(&demo_schema(), 20_000, 0.05, 2).unwrap();
        assert!((ds.positive_rate() - 0.05).abs() <= 0.01);
    }

    #[test]
    fn requires_client_features() {
        let schema =
            FeatureSchema::new(vec![FeatureSpec::numeric("x", Side::Server), FeatureSpec::label("y")]).unwrap();
        assert!(generate_synthetic(&schema, 10, 0.5, 0).is_err());
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic(&demo_schema(), 500, 0.3, 9).unwrap();
        let b = generate_synthetic(&demo_schema(), 500, 0.3, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_follow_planted_model() {
        // A planted signal means some category of a client feature shifts the
        // positive rate well away from the global rate.
        let ds = generate_synthetic(&demo_schema(), 20_000, 0.5, 4).unwrap();
        let f = ds.schema().index_of("c_cat_a").unwrap();
        let spread = (0..3)
            .map(|k| {
                let rows: Vec<_> = ds.rows().iter().filter(|r| r.category(f) == k).collect();
                rows.iter().filter(|r| r.label == 1).count() as f64 / rows.len() as f64
            })
            .fold((1.0f64, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
        assert!(spread.1 - spread.0 > 0.05, "{spread:?}");
    }
}
