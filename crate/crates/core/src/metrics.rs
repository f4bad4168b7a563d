//! AUC, F1, accuracy and confusion counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-vs-rest confusion counts for a single class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

impl ConfusionCounts {
    pub fn for_class(predictions: &[u32], truths: &[u32], class: u32) -> Self {
        let mut c = Self::default();
        for (&p, &t) in predictions.iter().zip(truths) {
            match (p == class, t == class) {
                (true, true) => c.true_positive += 1,
                (true, false) => c.false_positive += 1,
                (false, true) => c.false_negative += 1,
                (false, false) => c.true_negative += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }

    /// `2tp / (2tp + fp + fn)`, 0 when the class is neither present nor predicted.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_positive + self.false_positive + self.false_negative;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.true_positive as f64 / denom as f64
        }
    }
}

/// Area under the ROC curve via the Mann–Whitney rank statistic with midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
            context: "auc scores/labels",
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidConfig("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        pos_rank_sum += midrank * pos_in_group as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum F1Averaging {
    /// F1 of one class (the positive class for binary targets).
    Binary { positive: u32 },
    /// Unweighted mean of per-class F1 over the given classes.
    Macro,
}

/// F1 score over `classes`. Classes without support contribute 0 to the
/// macro mean.
pub fn f1(predictions: &[u32], truths: &[u32], classes: &[u32], averaging: F1Averaging) -> Result<f64> {
    check_aligned(predictions, truths)?;
    match averaging {
        F1Averaging::Binary { positive } => Ok(ConfusionCounts::for_class(predictions, truths, positive).f1()),
        F1Averaging::Macro => {
            if classes.is_empty() {
                return Err(Error::EmptyInput("f1 classes"));
            }
            let sum: f64 = classes
                .iter()
                .map(|&c| ConfusionCounts::for_class(predictions, truths, c).f1())
                .sum();
            Ok(sum / classes.len() as f64)
        }
    }
}

/// F1 with the convention used in attack reports: positive-class (index 1)
/// F1 for binary features, otherwise macro F1 over the classes that occur in
/// either the truths or the predictions.
pub fn feature_f1(predictions: &[u32], truths: &[u32], cardinality: usize) -> Result<f64> {
    if cardinality == 2 {
        return f1(predictions, truths, &[], F1Averaging::Binary { positive: 1 });
    }
    let mut classes: Vec<u32> = predictions.iter().chain(truths).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    f1(predictions, truths, &classes, F1Averaging::Macro)
}

pub fn accuracy(predictions: &[u32], truths: &[u32]) -> Result<f64> {
    check_aligned(predictions, truths)?;
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

fn check_aligned(predictions: &[u32], truths: &[u32]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            actual: predictions.len(),
            context: "predictions vs truths",
        });
    }
    Ok(())
}
