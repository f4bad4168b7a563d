use serde::{Deserialize, Serialize};

use crate::dp::{DpConfig, LabelDpConfig};
use crate::error::{Error, Result};
use crate::nn::{Architecture, DEFAULT_LEARNING_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// One client, mini-batches over the whole training split.
    #[default]
    Sl,
    /// Many clients of `fsl_samples_per_client` samples, each one mini-batch,
    /// sharing the client-side weights.
    Fsl,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sl" => Ok(TrainMode::Sl),
            "fsl" => Ok(TrainMode::Fsl),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode `{other}` (expected sl|fsl)"
            ))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Sl => "SL",
            TrainMode::Fsl => "FSL",
        })
    }
}

/// Which parameters a training run hands back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retain {
    /// The epoch with the highest test AUC.
    #[default]
    BestTestAuc,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub architecture: Architecture,
    pub batch_size: usize,
    pub epochs: usize,
    pub fsl_samples_per_client: usize,
    pub seed: u64,
    pub dp: Option<DpConfig>,
    pub label_dp: Option<LabelDpConfig>,
    pub retain: Retain,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Sl,
            learning_rate: DEFAULT_LEARNING_RATE,
            architecture: Architecture::default(),
            batch_size: 128,
            epochs: 10,
            fsl_samples_per_client: 16,
            seed: 0,
            dp: None,
            label_dp: None,
            retain: Retain::BestTestAuc,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.fsl_samples_per_client == 0 {
            return Err(Error::InvalidConfig("samples per client must be >= 1".into()));
        }
        let a = &self.architecture;
        if a.embed_dim == 0 || a.cut_width == 0 {
            return Err(Error::InvalidConfig("embedding and cut widths must be >= 1".into()));
        }
        if a.server_hidden.iter().chain(&a.client_hidden).any(|&w| w == 0) {
            return Err(Error::InvalidConfig("hidden layer widths must be >= 1".into()));
        }
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        if let Some(l) = &self.label_dp {
            l.validate()?;
        }
        Ok(())
    }

    /// Mini-batch size actually used per optimizer step.
    pub fn step_batch_size(&self) -> usize {
        match self.mode {
            TrainMode::Sl => self.batch_size,
            TrainMode::Fsl => self.fsl_samples_per_client,
        }
    }
}
