//! Training loop and the large-sample gradient oracle.
//!
//! Each group draws from its own stream keyed by `(seed, step, question)`, and
//! partial sums are combined in a fixed order, so results do not depend on the
//! size of the rayon pool the caller runs under.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::grpo::{
    accumulate_surrogate_gradient, apply_ascent, group_advantages, AdvantageVector, GroupRollout,
    OptimizerConfig, OptimizerState,
};
use crate::policy::{Gradient, Matrix, PolicyParams};
use crate::reward::{shape_group, RewardConfig};
use crate::rng::{mix, stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub total_steps: u64,
    pub questions_per_step: usize,
    pub group_size: usize,
    pub seed: u64,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::invalid_config("run.total_steps must be >= 1"));
        }
        if self.questions_per_step == 0 {
            return Err(Error::invalid_config("run.questions_per_step must be >= 1"));
        }
        if self.group_size < 2 {
            return Err(Error::invalid_config("run.group_size must be >= 2"));
        }
        Ok(())
    }
}

/// One group with its shaped rewards and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapedGroup {
    pub rollout: GroupRollout,
    pub shaped: Vec<f64>,
    pub advantages: AdvantageVector,
}

/// Samples a question and a group from the probabilities in `probs`, then
/// shapes and normalizes its rewards.
pub fn draw_shaped_group(
    env: &Environment,
    probs: &Matrix,
    reward: &RewardConfig,
    step: u64,
    group_size: usize,
    question_id: u64,
    rng: &mut crate::rng::Stream,
) -> Result<ShapedGroup> {
    let q = env.sample_question(question_id, rng);
    let rollout = env.rollout_with_probs(probs.row(q.bucket), &q, group_size, rng)?;
    let shaped = shape_group(
        &rollout.outcomes(),
        &rollout.scores(),
        &rollout.lengths(),
        reward,
        step,
    )?;
    let advantages = group_advantages(&shaped, reward.adv_epsilon)?;
    Ok(ShapedGroup {
        rollout,
        shaped,
        advantages,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub mean_shaped_reward: f64,
    pub mean_outcome_reward: f64,
    pub mean_length_tokens: f64,
    /// Expected accuracy of the sampling policy (exact, not sampled).
    pub accuracy_fraction: f64,
    /// Norm of the first inner-epoch batch gradient.
    pub grad_norm: f64,
    pub grad_sq_running_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    /// Policy at the start of each step, when requested.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub policies: Vec<PolicyParams>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    pub fn shaped_rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_shaped_reward).collect()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_length_tokens).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub history: TrainHistory,
    pub final_policy: PolicyParams,
}

/// Runs group-relative policy optimization from the environment's initial policy.
pub fn train(
    env: &Environment,
    reward: &RewardConfig,
    optimizer: &OptimizerConfig,
    run: &RunSpec,
    record_policies: bool,
) -> Result<TrainOutput> {
    train_from(env, env.initial_policy(), reward, optimizer, run, record_policies)
}

pub fn train_from(
    env: &Environment,
    initial: PolicyParams,
    reward: &RewardConfig,
    optimizer: &OptimizerConfig,
    run: &RunSpec,
    record_policies: bool,
) -> Result<TrainOutput> {
    reward.validate()?;
    optimizer.validate()?;
    run.validate()?;
    let seed = mix(run.seed, &[env.config().seed_salt]);
    let q = run.questions_per_step;
    let mut policy = initial;
    let mut state = OptimizerState::new(optimizer);
    let mut history = TrainHistory::default();
    let mut grad_sq_sum = 0.0;

    for t in 0..run.total_steps {
        let old = policy.clone();
        let old_probs = old.prob_table();
        let groups = (0..q)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(seed, Purpose::Train, t, i as u64);
                draw_shaped_group(
                    env,
                    &old_probs,
                    reward,
                    t,
                    run.group_size,
                    t * q as u64 + i as u64,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.at_step(t))?;

        let lr = state.learning_rate();
        let mut first_norm = 0.0;
        for epoch in 0..optimizer.inner_epochs {
            let probs = if epoch == 0 {
                old_probs.clone()
            } else {
                policy.prob_table()
            };
            let mut grad = Gradient::zeros(policy.num_buckets(), policy.num_templates());
            for g in &groups {
                accumulate_surrogate_gradient(
                    probs.row(g.rollout.bucket),
                    &g.rollout,
                    &g.advantages,
                    optimizer.clip_epsilon,
                    1.0 / q as f64,
                    &mut grad,
                )
                .map_err(|e| e.at_step(t))?;
            }
            if epoch == 0 {
                first_norm = grad.norm();
            }
            policy = apply_ascent(&policy, &grad, lr).map_err(|e| e.at_step(t))?;
        }
        state.step += 1;

        let n = (q * run.group_size) as f64;
        let (mut shaped, mut correct, mut length) = (0.0, 0.0, 0.0);
        for g in &groups {
            shaped += g.shaped.iter().sum::<f64>();
            for s in &g.rollout.samples {
                correct += if s.correct { 1.0 } else { 0.0 };
                length += f64::from(s.length);
            }
        }
        grad_sq_sum += first_norm * first_norm;
        history.records.push(StepRecord {
            step: t,
            mean_shaped_reward: shaped / n,
            mean_outcome_reward: correct / n,
            mean_length_tokens: length / n,
            accuracy_fraction: env.expected_accuracy(&old),
            grad_norm: first_norm,
            grad_sq_running_mean: grad_sq_sum / (t + 1) as f64,
        });
        if record_policies {
            history.policies.push(old);
        }
    }
    Ok(TrainOutput {
        history,
        final_policy: policy,
    })
}

/// Monte-Carlo estimate of the expected (unclipped, ratio 1) surrogate gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub mean: Gradient,
    /// Per-coordinate standard error of `mean`.
    pub std_error: Gradient,
    /// Sum over coordinates of the single-group gradient variance.
    pub single_group_variance: f64,
    /// Mean shaped reward of the sampled responses: the objective value.
    pub mean_reward: f64,
    pub n_samples: usize,
}

impl GradientEstimate {
    /// `||mean||²` minus its sampling bias `Σ SE²`; unbiased for `||∇J||²`.
    pub fn debiased_norm_sq(&self) -> f64 {
        self.mean.norm_sq() - self.std_error.norm_sq()
    }
}

const ORACLE_CHUNK: usize = 256;

/// Large-sample oracle for `∇J(θ)`: averages single-group surrogate gradients at
/// `π_θ = π_old` over `n_samples` independent groups.
pub fn true_gradient_estimate(
    env: &Environment,
    policy: &PolicyParams,
    reward: &RewardConfig,
    step: u64,
    group_size: usize,
    n_samples: usize,
    seed: u64,
) -> Result<GradientEstimate> {
    if n_samples < 2 {
        return Err(Error::invalid_input("gradient oracle needs at least 2 groups"));
    }
    let probs = policy.prob_table();
    let (rows, cols) = probs.shape();
    let seed = mix(seed, &[env.config().seed_salt]);
    let chunks = n_samples.div_ceil(ORACLE_CHUNK);
    let partials = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sum = Matrix::zeros(rows, cols);
            let mut sum_sq = Matrix::zeros(rows, cols);
            let mut reward_sum = 0.0;
            let mut scratch = Matrix::zeros(rows, cols);
            let lo = c * ORACLE_CHUNK;
            let hi = (lo + ORACLE_CHUNK).min(n_samples);
            for i in lo..hi {
                let mut rng = stream(seed, Purpose::Oracle, step, i as u64);
                let g = draw_shaped_group(env, &probs, reward, step, group_size, i as u64, &mut rng)?;
                let b = g.rollout.bucket;
                scratch.row_mut(b).fill(0.0);
                accumulate_surrogate_gradient(
                    probs.row(b),
                    &g.rollout,
                    &g.advantages,
                    f64::INFINITY,
                    1.0,
                    &mut scratch,
                )?;
                for (s, v) in sum.row_mut(b).iter_mut().zip(scratch.row(b)) {
                    *s += v;
                }
                for (sq, v) in sum_sq.row_mut(b).iter_mut().zip(scratch.row(b)) {
                    *sq += v * v;
                }
                reward_sum += g.shaped.iter().sum::<f64>() / g.shaped.len() as f64;
            }
            Ok((sum, sum_sq, reward_sum))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sum = Matrix::zeros(rows, cols);
    let mut sum_sq = Matrix::zeros(rows, cols);
    let mut reward_sum = 0.0;
    for (s, sq, r) in partials {
        sum.add_scaled(&s, 1.0);
        sum_sq.add_scaled(&sq, 1.0);
        reward_sum += r;
    }
    let n = n_samples as f64;
    let mut mean = sum;
    mean.scale(1.0 / n);
    let mut std_error = Matrix::zeros(rows, cols);
    let mut total_var = 0.0;
    for ((se, &m), &sq) in std_error
        .as_mut_slice()
        .iter_mut()
        .zip(mean.as_slice())
        .zip(sum_sq.as_slice())
    {
        let var = ((sq / n - m * m) * n / (n - 1.0)).max(0.0);
        total_var += var;
        *se = (var / n).sqrt();
    }
    Ok(GradientEstimate {
        mean,
        std_error,
        single_group_variance: total_var,
        mean_reward: reward_sum / n,
        n_samples,
    })
}
