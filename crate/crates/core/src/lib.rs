//! Training-data explanations for linear-reward RLHF, and targeted unlearning.
//!
//! Given preference data in a feature space, an unsatisfactory response is explained
//! by the smallest nearby set of training comparisons whose convex hull contains the
//! response feature's projection. That set is then unlearned from the Bradley-Terry
//! reward model and a shared softmax policy is fine-tuned under the unlearned reward,
//! with a KL guard on prompts whose responses were already satisfactory.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the `*F64` / `*F32`
//! aliases below name the concrete instantiations.

pub mod error;
pub mod explain;
pub mod hull;
pub mod io;
mod linalg;
mod optim;
pub mod oracle;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod scalar;
pub mod synthetic;
pub mod types;
pub mod unlearn;

pub use error::{Error, Result};
pub use explain::{explain, explain_batch, rank_by_distance, Explanation, ExplainerConfig};
pub use hull::{
    closest_decomposition, hull_membership, project_onto_hull, simplex_projection, HullProblem, ProjectionResult,
    SimplexWeights, SolverConfig,
};
pub use oracle::{brute_force_min_subset, finite_difference_gradient, retrain_oracle, OracleResult};
pub use policy::{
    evaluate_win_rate, finetune_objective, finetune_policy, kl_divergence, policy_probs, rlhf_policy, CandidatePolicy,
    FinetuneConfig, WinRateReport,
};
pub use reward::{
    bt_probability, log_likelihood, log_likelihood_gradient, reformulated_log_likelihood, reward, train_reward, Init,
    RewardParams, ScoredComparison, TrainConfig,
};
pub use scalar::Real;
pub use synthetic::{generate_synthetic_world, SyntheticWorld, WorldConfig};
pub use types::{
    feature_comparison, load_preference_dataset, load_validation_set, partition_by_threshold, FeatureVector, Label,
    PreferenceDataset, PreferenceExample, ValidationItem, ValidationSet,
};
pub use unlearn::{unlearn_reward, UnlearnConfig, UnlearnTrace};

pub type FeatureVectorF64 = FeatureVector<f64>;
pub type FeatureVectorF32 = FeatureVector<f32>;
pub type PreferenceDatasetF64 = PreferenceDataset<f64>;
pub type PreferenceDatasetF32 = PreferenceDataset<f32>;
pub type ValidationSetF64 = ValidationSet<f64>;
pub type ValidationSetF32 = ValidationSet<f32>;
pub type RewardParamsF64 = RewardParams<f64>;
pub type RewardParamsF32 = RewardParams<f32>;
pub type SimplexWeightsF64 = SimplexWeights<f64>;
pub type SimplexWeightsF32 = SimplexWeights<f32>;
pub type ExplanationF64 = Explanation<f64>;
pub type ExplanationF32 = Explanation<f32>;
pub type CandidatePolicyF64 = CandidatePolicy<f64>;
pub type CandidatePolicyF32 = CandidatePolicy<f32>;
pub type SyntheticWorldF64 = SyntheticWorld<f64>;
