use serde::{Deserialize, Serialize};

use super::space::{CandidateConfiguration, ConfigurationSpace};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, feature_f1};

/// Reconstruction quality of one private feature (or the label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: String,
    pub cardinality: usize,
    pub f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub n_samples: usize,
    pub features: Vec<FeatureScore>,
    pub label: FeatureScore,
}

impl AttackReport {
    pub fn feature(&self, name: &str) -> Option<&FeatureScore> {
        self.features.iter().find(|f| f.feature == name)
    }

    /// Mean F1 over the private features (label excluded).
    pub fn mean_feature_f1(&self) -> f64 {
        self.features.iter().map(|f| f.f1).sum::<f64>() / self.features.len().max(1) as f64
    }

    /// Private features followed by the label.
    pub fn scores(&self) -> impl Iterator<Item = &FeatureScore> {
        self.features.iter().chain(std::iter::once(&self.label))
    }
}

/// Scores predictions against truths: positive-class F1 for binary
/// features, macro F1 otherwise, plus accuracy.
pub fn evaluate_attack(
    predictions: &[CandidateConfiguration],
    truths: &[CandidateConfiguration],
    space: &ConfigurationSpace,
) -> Result<AttackReport> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("attack outcomes"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            actual: predictions.len(),
            context: "predictions vs truths",
        });
    }
    let score = |name: &str, card: usize, get: &dyn Fn(&CandidateConfiguration) -> u32| -> Result<FeatureScore> {
        let p: Vec<u32> = predictions.iter().map(get).collect();
        let t: Vec<u32> = truths.iter().map(get).collect();
        Ok(FeatureScore {
            feature: name.to_string(),
            cardinality: card,
            f1: feature_f1(&p, &t, card)?,
            accuracy: accuracy(&p, &t)?,
        })
    };
    let features = space
        .names()
        .iter()
        .zip(space.cardinalities())
        .enumerate()
        .map(|(j, (name, &card))| score(name, card, &|c: &CandidateConfiguration| c.features[j]))
        .collect::<Result<Vec<_>>>()?;
    let label = score(space.label_name(), 2, &|c: &CandidateConfiguration| c.label as u32)?;
    Ok(AttackReport {
        n_samples: predictions.len(),
        features,
        label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> ConfigurationSpace {
        ConfigurationSpace::new(vec!["sex".into(), "race".into()], vec![2, 3], "income", 1000).unwrap()
    }

    fn c(sex: u32, race: u32, label: u8) -> CandidateConfiguration {
        CandidateConfiguration {
            features: vec![sex, race],
            label,
        }
    }

    #[test]
    fn perfect_predictor() {
        let t = vec![c(0, 1, 1), c(1, 2, 0), c(1, 0, 1)];
        let r = evaluate_attack(&t, &t, &space()).unwrap();
        assert!(r.scores().all(|s| s.f1 == 1.0 && s.accuracy == 1.0));
    }

    #[test]
    fn all_zero_labels_score_zero() {
        let t = vec![c(0, 0, 1), c(0, 0, 0), c(0, 0, 0), c(0, 0, 0)];
        let p = vec![c(0, 0, 0); 4];
        let r = evaluate_attack(&p, &t, &space()).unwrap();
        assert_eq!(r.label.f1, 0.0);
        assert_eq!(r.label.accuracy, 0.75);
    }

    #[test]
    fn six_outcome_fixture() {
        let t = vec![c(0, 0, 0), c(1, 1, 1), c(1, 2, 1), c(0, 2, 0), c(1, 0, 1), c(0, 1, 0)];
        let p = vec![c(0, 0, 0), c(1, 1, 0), c(0, 2, 1), c(0, 1, 0), c(1, 0, 1), c(1, 1, 1)];
        let r = evaluate_attack(&p, &t, &space()).unwrap();
        // sex, positive class 1: tp 2 (rows 1, 4), fp 1 (row 5), fn 1 (row 2)
        assert!((r.features[0].f1 - 4.0 / 6.0).abs() < 1e-15);
        // race: class 0 tp 2 → 1; class 1 tp 2 fp 1 → 4/5; class 2 tp 1 fn 1 → 2/3
        let race = (1.0 + 0.8 + 2.0 / 3.0) / 3.0;
        assert!((r.features[1].f1 - race).abs() < 1e-15);
        // label: tp 2 (rows 2, 4), fp 1 (row 5), fn 1 (row 1)
        assert!((r.label.f1 - 4.0 / 6.0).abs() < 1e-15);
        assert!((r.features[1].accuracy - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn empty_outcomes_error() {
        assert!(evaluate_attack(&[], &[], &space()).is_err());
    }
}
