//! Group-relative advantages, the clipped surrogate and its gradient for the
//! template-level softmax policy, and the decayed-step ascent update.
//!
//! A response is a single action (its template), so the per-token average of
//! the surrogate collapses to one term per response. There is no KL term.

use serde::{Deserialize, Serialize};

use crate::env::ConcisenessFeatures;
use crate::error::{Error, Result};
use crate::policy::{softmax, Gradient, PolicyParams};
use crate::reward::{ConcisenessScore, OutcomeReward};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub template_index: usize,
    /// Probability of `template_index` under the policy that generated it.
    pub old_prob: f64,
    pub correct: bool,
    pub length: u32,
    pub features: ConcisenessFeatures,
    pub score: ConcisenessScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRollout {
    pub question_id: u64,
    pub bucket: usize,
    pub samples: Vec<Sample>,
}

impl GroupRollout {
    pub fn group_size(&self) -> usize {
        self.samples.len()
    }

    pub fn outcomes(&self) -> Vec<OutcomeReward> {
        self.samples.iter().map(|s| OutcomeReward::from(s.correct)).collect()
    }

    pub fn scores(&self) -> Vec<ConcisenessScore> {
        self.samples.iter().map(|s| s.score).collect()
    }

    pub fn lengths(&self) -> Vec<u32> {
        self.samples.iter().map(|s| s.length).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector(pub Vec<f64>);

impl AdvantageVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `(R_i − mean) / (std + eps)` with the population standard deviation.
///
/// A group whose rewards are all equal yields all zeros, including at `eps = 0`.
pub fn group_advantages(rewards: &[f64], adv_epsilon: f64) -> Result<AdvantageVector> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::invalid_input(format!(
            "advantages need a group of at least 2, got {g}"
        )));
    }
    if !(adv_epsilon.is_finite() && adv_epsilon >= 0.0) {
        return Err(Error::invalid_input(format!(
            "adv_epsilon must be >= 0, got {adv_epsilon}"
        )));
    }
    if let Some(bad) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(Error::Numeric {
            message: format!("reward {bad} is not finite"),
            coords: vec![],
        });
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(AdvantageVector(vec![0.0; g]));
    }
    let n = g as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + adv_epsilon;
    Ok(AdvantageVector(
        rewards.iter().map(|r| (r - mean) / denom).collect(),
    ))
}

fn check_pair(rollout: &GroupRollout, advantages: &AdvantageVector) -> Result<()> {
    if rollout.samples.len() != advantages.len() {
        return Err(Error::invalid_input(format!(
            "{} samples but {} advantages",
            rollout.samples.len(),
            advantages.len()
        )));
    }
    if let Some(i) = rollout.samples.iter().position(|s| s.old_prob.is_nan() || s.old_prob <= 0.0) {
        return Err(Error::invalid_input(format!(
            "sample {i} has old_prob {} (must be > 0)",
            rollout.samples[i].old_prob
        )));
    }
    if let Some(i) = advantages.values().iter().position(|a| !a.is_finite()) {
        return Err(Error::Numeric {
            message: format!("advantage {i} is not finite"),
            coords: vec![(rollout.bucket, rollout.samples[i].template_index)],
        });
    }
    Ok(())
}

fn clipped_term(ratio: f64, adv: f64, clip_epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    (ratio * adv).min(clipped * adv)
}

/// Whether the min in the clipped objective takes the constant (clipped) branch.
pub fn is_clipped(ratio: f64, adv: f64, clip_epsilon: f64) -> bool {
    (adv > 0.0 && ratio > 1.0 + clip_epsilon) || (adv < 0.0 && ratio < 1.0 - clip_epsilon)
}

/// Clipped surrogate `(1/G) Σ min(r A, clip(r, 1−ε, 1+ε) A)` for one group.
pub fn surrogate_value(
    policy: &PolicyParams,
    rollout: &GroupRollout,
    advantages: &AdvantageVector,
    clip_epsilon: f64,
) -> Result<f64> {
    check_pair(rollout, advantages)?;
    let probs = policy.probs(rollout.bucket);
    let g = rollout.samples.len() as f64;
    Ok(rollout
        .samples
        .iter()
        .zip(advantages.values())
        .map(|(s, &a)| clipped_term(probs[s.template_index] / s.old_prob, a, clip_epsilon))
        .sum::<f64>()
        / g)
}

/// Adds `scale · ∇θ surrogate` for one group into `grad`, given the current
/// probabilities of the group's bucket.
pub fn accumulate_surrogate_gradient(
    probs: &[f64],
    rollout: &GroupRollout,
    advantages: &AdvantageVector,
    clip_epsilon: f64,
    scale: f64,
    grad: &mut Gradient,
) -> Result<()> {
    check_pair(rollout, advantages)?;
    let g = rollout.samples.len() as f64;
    let row = grad.row_mut(rollout.bucket);
    for (s, &a) in rollout.samples.iter().zip(advantages.values()) {
        if a == 0.0 {
            continue;
        }
        let ratio = probs[s.template_index] / s.old_prob;
        if is_clipped(ratio, a, clip_epsilon) {
            continue;
        }
        // d ratio / d logits = ratio · (e_a − π)
        let w = scale * a * ratio / g;
        for (j, (r, p)) in row.iter_mut().zip(probs).enumerate() {
            let indicator = if j == s.template_index { 1.0 } else { 0.0 };
            *r += w * (indicator - p);
        }
    }
    Ok(())
}

/// `∇θ` of the clipped surrogate for one group. Rows of other buckets are zero.
pub fn surrogate_gradient(
    policy: &PolicyParams,
    rollout: &GroupRollout,
    advantages: &AdvantageVector,
    clip_epsilon: f64,
) -> Result<Gradient> {
    if rollout.bucket >= policy.num_buckets() {
        return Err(Error::invalid_input(format!(
            "rollout bucket {} outside policy with {} buckets",
            rollout.bucket,
            policy.num_buckets()
        )));
    }
    let mut grad = Gradient::zeros(policy.num_buckets(), policy.num_templates());
    let probs = softmax(policy.logits.row(rollout.bucket));
    accumulate_surrogate_gradient(&probs, rollout, advantages, clip_epsilon, 1.0, &mut grad)?;
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// `base_lr / sqrt(t)` for `t = 1, 2, ...`
    #[default]
    InvSqrt,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub clip_epsilon: f64,
    pub inner_epochs: u32,
    pub schedule: LrSchedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base_lr: 2.0,
            clip_epsilon: 0.2,
            inner_epochs: 1,
            schedule: LrSchedule::InvSqrt,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(Error::invalid_config(format!(
                "optimizer.base_lr must be >= 0, got {}",
                self.base_lr
            )));
        }
        if !(self.clip_epsilon.is_finite() && self.clip_epsilon >= 0.0) {
            return Err(Error::invalid_config("optimizer.clip_epsilon must be >= 0"));
        }
        if self.inner_epochs == 0 {
            return Err(Error::invalid_config("optimizer.inner_epochs must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    /// Completed outer updates.
    pub step: u64,
    pub base_lr: f64,
    pub clip_epsilon: f64,
    pub inner_epochs: u32,
    pub schedule: LrSchedule,
}

impl OptimizerState {
    pub fn new(config: &OptimizerConfig) -> Self {
        Self {
            step: 0,
            base_lr: config.base_lr,
            clip_epsilon: config.clip_epsilon,
            inner_epochs: config.inner_epochs,
            schedule: config.schedule,
        }
    }

    /// Step size for the next update, `base_lr / sqrt(step + 1)`.
    pub fn learning_rate(&self) -> f64 {
        match self.schedule {
            LrSchedule::InvSqrt => self.base_lr / ((self.step + 1) as f64).sqrt(),
            LrSchedule::Constant => self.base_lr,
        }
    }
}

/// `θ + lr · grad` without touching the step counter.
pub fn apply_ascent(policy: &PolicyParams, grad: &Gradient, lr: f64) -> Result<PolicyParams> {
    if policy.logits.shape() != grad.shape() {
        return Err(Error::invalid_input("gradient shape does not match policy"));
    }
    let bad = grad.non_finite();
    if !bad.is_empty() {
        return Err(Error::Numeric {
            message: "gradient has non-finite entries".into(),
            coords: bad,
        });
    }
    let mut next = policy.clone();
    next.logits.add_scaled(grad, lr);
    Ok(next)
}

/// One ascent step at the scheduled rate; advances `state.step`.
pub fn sgd_step(
    policy: &PolicyParams,
    grad: &Gradient,
    state: &mut OptimizerState,
) -> Result<PolicyParams> {
    let next = apply_ascent(policy, grad, state.learning_rate())?;
    state.step += 1;
    Ok(next)
}
