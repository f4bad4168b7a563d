//! Gradient-matching reconstruction of private client inputs, the top-k
//! majority-vote variant, and nearest-neighbour baselines.

mod exact;
mod knn;
mod report;
mod space;

pub use exact::{
    exact_attack, exact_attack_topk, majority_vote, reference_distances, AttackOutcome, AttackVariant,
    CandidateDistances, GradientMatcher,
};
pub use knn::{baseline_knn_activation, baseline_knn_features, ActivationKnn, ServerFeatureKnn, DEFAULT_BASELINE_K};
pub use report::{evaluate_attack, AttackReport, FeatureScore};
pub use space::{enumerate_configurations, CandidateConfiguration, ConfigurationSpace, DEFAULT_CANDIDATE_CAP};
