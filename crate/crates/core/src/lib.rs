//! Reward shaping laboratory for group-relative policy optimization.
//!
//! The crate pairs a conciseness-gated reward and several length-penalty
//! baselines with a small synthetic reasoning environment, a softmax policy
//! trained by clipped group-relative policy gradients, and diagnostics for
//! gradient variance, convergence and collapse.

pub mod analysis;
pub mod env;
pub mod error;
pub mod grpo;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod stats;
pub mod train;

pub use env::{
    conciseness_score, env_covariance, optimal_length, ConcisenessFeatures, CovarianceEstimate,
    EnvConfig, Environment, Question, ResponseTemplate, RubricConfig,
};
pub use error::{Error, Result};
pub use grpo::{
    group_advantages, sgd_step, surrogate_gradient, surrogate_value, AdvantageVector, GroupRollout,
    LrSchedule, OptimizerConfig, OptimizerState, Sample,
};
pub use policy::{Gradient, Matrix, PolicyParams};
pub use reward::{
    annealing_coeff, cos_fn, cosine_reward, crf_reward, difficulty_coeff, kimi_rewards,
    outcome_reward, shape_group, weighted_sum_reward, ConcisenessScore, CosineParams,
    OutcomeReward, RewardConfig, RewardKind,
};
pub use train::{
    train, train_from, true_gradient_estimate, GradientEstimate, RunSpec, StepRecord,
    TrainHistory, TrainOutput,
};
