//! K-nearest-neighbour reconstruction baselines: from the server's own
//! features, or from the cut activations it produces.

use super::exact::majority_vote;
use super::space::CandidateConfiguration;
use crate::error::{Error, Result};
use crate::nn::linalg::l2_distance;
use crate::nn::{CutActivation, Scaler, ServerFeatures};

/// Default neighbourhood size of both baselines.
pub const DEFAULT_BASELINE_K: usize = 5;

/// Indices of the `k` nearest rows by `(distance, row index)`.
fn k_nearest(n: usize, k: usize, dist: impl Fn(usize) -> f64) -> Vec<usize> {
    let k = k.min(n);
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for i in 0..n {
        let d = dist(i);
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|&(bd, _)| bd <= d);
        best.insert(pos, (d, i));
        best.truncate(k);
    }
    best.into_iter().map(|(_, i)| i).collect()
}

fn vote(targets: &[CandidateConfiguration], rows: &[usize], cardinalities: &[usize]) -> CandidateConfiguration {
    let ranked: Vec<CandidateConfiguration> = rows.iter().map(|&i| targets[i].clone()).collect();
    majority_vote(&ranked, cardinalities)
}

fn check(n: usize, targets: usize, k: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyInput("baseline training set"));
    }
    if n != targets {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: targets,
            context: "baseline rows vs targets",
        });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("baseline k must be >= 1".into()));
    }
    Ok(())
}

/// Neighbours by Hamming distance on categorical server features plus L2
/// distance on standardised numeric server features.
#[derive(Debug, Clone)]
pub struct ServerFeatureKnn {
    categorical: Vec<Vec<u32>>,
    numeric: Vec<Vec<f64>>,
    scalers: Vec<Scaler>,
    targets: Vec<CandidateConfiguration>,
    cardinalities: Vec<usize>,
    k: usize,
}

impl ServerFeatureKnn {
    /// Numerics are standardised with scalers fitted on `train`.
    pub fn fit(
        train: &[ServerFeatures],
        targets: Vec<CandidateConfiguration>,
        cardinalities: Vec<usize>,
        k: usize,
    ) -> Result<Self> {
        check(train.len(), targets.len(), k)?;
        let m = train[0].numeric.len();
        let scalers: Vec<Scaler> = (0..m)
            .map(|j| Scaler::fit(train.iter().map(|x| x.numeric[j])))
            .collect();
        Ok(Self {
            categorical: train.iter().map(|x| x.categorical.clone()).collect(),
            numeric: train
                .iter()
                .map(|x| x.numeric.iter().zip(&scalers).map(|(v, s)| s.apply(*v)).collect())
                .collect(),
            scalers,
            targets,
            cardinalities,
            k,
        })
    }

    pub fn distance(&self, row: usize, categorical: &[u32], numeric_std: &[f64]) -> f64 {
        let hamming = self.categorical[row]
            .iter()
            .zip(categorical)
            .filter(|(a, b)| a != b)
            .count() as f64;
        hamming + l2_distance(&self.numeric[row], numeric_std)
    }

    pub fn neighbours(&self, query: &ServerFeatures) -> Vec<usize> {
        let q: Vec<f64> = query
            .numeric
            .iter()
            .zip(&self.scalers)
            .map(|(v, s)| s.apply(*v))
            .collect();
        k_nearest(self.targets.len(), self.k, |i| self.distance(i, &query.categorical, &q))
    }

    pub fn predict(&self, query: &ServerFeatures) -> CandidateConfiguration {
        vote(&self.targets, &self.neighbours(query), &self.cardinalities)
    }
}

/// Neighbours by L2 distance between cut activations.
#[derive(Debug, Clone)]
pub struct ActivationKnn {
    activations: Vec<CutActivation>,
    targets: Vec<CandidateConfiguration>,
    cardinalities: Vec<usize>,
    k: usize,
}

impl ActivationKnn {
    pub fn fit(
        activations: Vec<CutActivation>,
        targets: Vec<CandidateConfiguration>,
        cardinalities: Vec<usize>,
        k: usize,
    ) -> Result<Self> {
        check(activations.len(), targets.len(), k)?;
        Ok(Self {
            activations,
            targets,
            cardinalities,
            k,
        })
    }

    pub fn neighbours(&self, query: &CutActivation) -> Vec<usize> {
        k_nearest(self.activations.len(), self.k, |i| {
            l2_distance(self.activations[i].as_slice(), query.as_slice())
        })
    }

    pub fn predict(&self, query: &CutActivation) -> CandidateConfiguration {
        vote(&self.targets, &self.neighbours(query), &self.cardinalities)
    }
}

/// One-shot form of [`ServerFeatureKnn`].
pub fn baseline_knn_features(
    train: &[ServerFeatures],
    targets: &[CandidateConfiguration],
    cardinalities: &[usize],
    query: &ServerFeatures,
    k: usize,
) -> Result<CandidateConfiguration> {
    Ok(ServerFeatureKnn::fit(train, targets.to_vec(), cardinalities.to_vec(), k)?.predict(query))
}

/// One-shot form of [`ActivationKnn`].
pub fn baseline_knn_activation(
    train: &[CutActivation],
    targets: &[CandidateConfiguration],
    cardinalities: &[usize],
    query: &CutActivation,
    k: usize,
) -> Result<CandidateConfiguration> {
    Ok(ActivationKnn::fit(train.to_vec(), targets.to_vec(), cardinalities.to_vec(), k)?.predict(query))
}
