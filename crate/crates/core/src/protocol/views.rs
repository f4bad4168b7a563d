use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dp::{flip_label, LabelDpConfig};
use crate::error::{Error, Result};
use crate::nn::{CutActivation, CutGradient, Scaler, ServerFeatures};
use crate::rng::{stream, Stream};

/// Server → client: the cut activation of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMessage {
    pub sample_id: usize,
    pub a_c: CutActivation,
}

/// Client → server: the (possibly privatised) cut gradient of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientMessage {
    pub sample_id: usize,
    pub cut_gradient: CutGradient,
}

/// Everything the server holds: its own feature columns, by row id.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerView {
    rows: Vec<ServerFeatures>,
}

impl ServerView {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let schema = dataset.schema();
        let cat = schema.server_categorical();
        let num = schema.server_numeric();
        let rows = dataset
            .rows()
            .iter()
            .map(|r| ServerFeatures {
                categorical: cat.iter().map(|&i| r.category(i)).collect(),
                numeric: num.iter().map(|&i| r.number(i)).collect(),
            })
            .collect();
        Self { rows }
    }

    pub fn from_rows(rows: Vec<ServerFeatures>) -> Self {
        Self { rows }
    }

    pub fn row(&self, id: usize) -> &ServerFeatures {
        &self.rows[id]
    }

    pub fn rows(&self) -> &[ServerFeatures] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Standardisation of each numeric column over `ids`.
    pub fn fit_scalers(&self, ids: &[usize]) -> Vec<Scaler> {
        let m = self.rows.first().map_or(0, |r| r.numeric.len());
        (0..m)
            .map(|j| Scaler::fit(ids.iter().map(|&i| self.rows[i].numeric[j])))
            .collect()
    }
}

/// Everything the client holds: private features and the labels it trains on.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientView {
    features: Vec<Vec<u32>>,
    labels: Vec<u8>,
}

impl ClientView {
    /// With label DP, every row's label is flipped once, in row order, from
    /// the run's label-flip stream.
    pub fn from_dataset(dataset: &Dataset, label_dp: Option<&LabelDpConfig>, seed: u64) -> Self {
        let idx = dataset.schema().client_features();
        let features = dataset
            .rows()
            .iter()
            .map(|r| idx.iter().map(|&i| r.category(i)).collect())
            .collect();
        let mut labels: Vec<u8> = dataset.rows().iter().map(|r| r.label).collect();
        if let Some(cfg) = label_dp {
            let mut rng = stream(seed, Stream::LabelFlip);
            for y in &mut labels {
                *y = flip_label(*y, cfg.flip_probability, &mut rng);
            }
        }
        Self { features, labels }
    }

    pub fn from_parts(features: Vec<Vec<u32>>, labels: Vec<u8>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                actual: labels.len(),
                context: "client features vs labels",
            });
        }
        Ok(Self { features, labels })
    }

    pub fn features(&self, id: usize) -> &[u32] {
        &self.features[id]
    }

    pub fn label(&self, id: usize) -> u8 {
        self.labels[id]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
