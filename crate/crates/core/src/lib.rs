//! Split-learning training with a label-party client, and the gradient
//! inversion attack that recovers the client's private inputs from the
//! cut-layer gradients it sends back.

mod error;

pub mod attack;
pub mod checkpoint;
pub mod data;
pub mod dp;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod protocol;
pub mod rng;
pub mod selftest;

pub use attack::{AttackReport, AttackVariant, ConfigurationSpace, GradientMatcher};
pub use checkpoint::Checkpoint;
pub use data::{Dataset, FeatureSchema};
pub use error::{Error, Result};
pub use experiment::{Experiment, ExperimentConfig, ResultRecord};
pub use protocol::{TrainConfig, TrainMode, TrainedModels, TrainingLog};
