//! Reward functions: binary outcome reward, the conciseness-gated reward and
//! its ablations, the additive weighted-sum variant, and the cosine and Kimi
//! length-penalty baselines.
//!
//! Everything in here is a pure function of its arguments.

use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};

use crate::error::{Error, Result};

/// Binary verifiable reward: 1 for a correct final answer, 0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OutcomeReward(bool);

impl OutcomeReward {
    pub fn correct(self) -> bool {
        self.0
    }

    pub fn value(self) -> f64 {
        if self.0 {
            1.0
        } else {
            0.0
        }
    }

    /// Accepts exactly 0.0 or 1.0.
    pub fn from_value(value: f64) -> Result<Self> {
        if value == 1.0 {
            Ok(Self(true))
        } else if value == 0.0 {
            Ok(Self(false))
        } else {
            Err(Error::invalid_input(format!(
                "outcome reward must be 0 or 1, got {value}"
            )))
        }
    }
}

pub fn outcome_reward(is_correct: bool) -> OutcomeReward {
    OutcomeReward(is_correct)
}

impl From<bool> for OutcomeReward {
    fn from(b: bool) -> Self {
        OutcomeReward(b)
    }
}

/// Conciseness rating on the tenths grid `0.1, 0.2, ..., 1.0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ConcisenessScore {
    tenths: u8,
}

impl ConcisenessScore {
    pub const MIN: Self = Self { tenths: 1 };
    pub const MAX: Self = Self { tenths: 10 };

    /// Clamps into `[0.1, 1.0]` and rounds half-up onto the 0.1 grid.
    pub fn snap(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::invalid_input(format!(
                "conciseness score must be finite, got {value}"
            )));
        }
        // The 1e-9 nudge keeps values like 0.35 (stored as 0.34999..) rounding up.
        let tenths = (value * 10.0 + 0.5 + 1e-9).floor().clamp(1.0, 10.0);
        Ok(Self {
            tenths: tenths as u8,
        })
    }

    pub fn from_tenths(tenths: u8) -> Result<Self> {
        if (1..=10).contains(&tenths) {
            Ok(Self { tenths })
        } else {
            Err(Error::invalid_input(format!(
                "conciseness tenths must be in 1..=10, got {tenths}"
            )))
        }
    }

    pub fn tenths(self) -> u8 {
        self.tenths
    }

    pub fn value(self) -> f64 {
        f64::from(self.tenths) / 10.0
    }
}

impl TryFrom<f64> for ConcisenessScore {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::snap(value)
    }
}

impl From<ConcisenessScore> for f64 {
    fn from(c: ConcisenessScore) -> f64 {
        c.value()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Outcome,
    Crf,
    WeightedSum,
    Cosine,
    Kimi,
    CrfNoAnneal,
    CrfNoDifficulty,
    CrfNoAnnealNoDifficulty,
}

impl RewardKind {
    pub fn label(self) -> &'static str {
        match self {
            RewardKind::Outcome => "outcome",
            RewardKind::Crf => "crf",
            RewardKind::WeightedSum => "weighted_sum",
            RewardKind::Cosine => "cosine",
            RewardKind::Kimi => "kimi",
            RewardKind::CrfNoAnneal => "crf_no_anneal",
            RewardKind::CrfNoDifficulty => "crf_no_difficulty",
            RewardKind::CrfNoAnnealNoDifficulty => "crf_no_anneal_no_difficulty",
        }
    }
}

/// Hyperparameters of the cosine length-scaled reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CosineParams {
    pub l_max: u32,
    pub r0_correct: f64,
    pub rl_correct: f64,
    pub r0_wrong: f64,
    pub rl_wrong: f64,
    pub r_exceed: f64,
}

impl Default for CosineParams {
    fn default() -> Self {
        Self {
            l_max: 512,
            r0_correct: 2.0,
            rl_correct: 1.0,
            r0_wrong: -10.0,
            rl_wrong: 0.0,
            r_exceed: -10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub kind: RewardKind,
    /// Weight of the conciseness or length term.
    pub alpha: f64,
    /// Horizon of the annealing coefficient.
    pub total_steps: u64,
    pub cosine: CosineParams,
    /// Added to the group standard deviation in the advantage denominator.
    pub adv_epsilon: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            kind: RewardKind::Crf,
            alpha: 1.0,
            total_steps: 1000,
            cosine: CosineParams::default(),
            adv_epsilon: 1e-6,
        }
    }
}

impl RewardConfig {
    pub fn new(kind: RewardKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_total_steps(mut self, total_steps: u64) -> Self {
        self.total_steps = total_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::invalid_config("reward.total_steps must be >= 1"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::invalid_config(format!(
                "reward.alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.adv_epsilon.is_finite() && self.adv_epsilon >= 0.0) {
            return Err(Error::invalid_config(format!(
                "reward.adv_epsilon must be finite and >= 0, got {}",
                self.adv_epsilon
            )));
        }
        let c = &self.cosine;
        if c.l_max == 0 {
            return Err(Error::invalid_config("reward.cosine.l_max must be >= 1"));
        }
        let finite = [c.r0_correct, c.rl_correct, c.r0_wrong, c.rl_wrong, c.r_exceed];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_config("reward.cosine values must be finite"));
        }
        Ok(())
    }
}

/// `s = exp(-step / total_steps)`; shrinks the conciseness bonus over training.
pub fn annealing_coeff(step: u64, total_steps: u64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid_config("annealing total_steps must be >= 1"));
    }
    Ok((-(step as f64) / total_steps as f64).exp())
}

/// `d = exp(n_correct / G)`, in `[1, e]`.
pub fn difficulty_coeff(group_outcomes: &[OutcomeReward]) -> Result<f64> {
    if group_outcomes.is_empty() {
        return Err(Error::invalid_input("difficulty coefficient needs a non-empty group"));
    }
    let correct = group_outcomes.iter().filter(|o| o.correct()).count();
    Ok((correct as f64 / group_outcomes.len() as f64).exp())
}

fn check_coeffs(alpha: f64, s: f64, d: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::invalid_input(format!("alpha must be >= 0, got {alpha}")));
    }
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::invalid_input(format!(
            "annealing coefficient must be in (0, 1], got {s}"
        )));
    }
    if !((1.0..=E).contains(&d)) {
        return Err(Error::invalid_input(format!(
            "difficulty coefficient must be in [1, e], got {d}"
        )));
    }
    Ok(())
}

/// `R° · (1 + alpha · c · weight)`: the gated bonus shared by the CRF family.
fn gated(outcome: OutcomeReward, score: ConcisenessScore, alpha: f64, weight: f64) -> f64 {
    if outcome.correct() {
        1.0 + alpha * score.value() * weight
    } else {
        0.0
    }
}

/// Conciseness reward function: `R° · [1 + alpha · c · (s + d)]`.
///
/// The conciseness bonus only exists for correct answers.
pub fn crf_reward(
    outcome: OutcomeReward,
    score: ConcisenessScore,
    alpha: f64,
    s: f64,
    d: f64,
) -> Result<f64> {
    check_coeffs(alpha, s, d)?;
    Ok(gated(outcome, score, alpha, s + d))
}

/// Additive combination `R° + alpha · c · (s + d)`; same terms as
/// [`crf_reward`] without the correctness gate.
pub fn weighted_sum_reward(
    outcome: OutcomeReward,
    score: ConcisenessScore,
    alpha: f64,
    s: f64,
    d: f64,
) -> Result<f64> {
    check_coeffs(alpha, s, d)?;
    Ok(outcome.value() + alpha * score.value() * (s + d))
}

/// Cosine schedule from `eta_max` at `t = 0` down to `eta_min` at `t = horizon`.
pub fn cos_fn(t: f64, horizon: f64, eta_min: f64, eta_max: f64) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid_input(format!("cos_fn horizon must be > 0, got {horizon}")));
    }
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::invalid_input(format!(
            "cos_fn t must be in [0, {horizon}], got {t}"
        )));
    }
    Ok(eta_min + 0.5 * (eta_max - eta_min) * (1.0 + (t * PI / horizon).cos()))
}

/// Cosine length-scaled reward `R° + alpha · f(R°, L)`.
///
/// A response that hits the length cap gets `r_exceed` regardless of correctness.
pub fn cosine_reward(
    outcome: OutcomeReward,
    length: u32,
    params: &CosineParams,
    alpha: f64,
) -> Result<f64> {
    if length == 0 {
        return Err(Error::invalid_input("cosine reward needs length >= 1"));
    }
    if length > params.l_max {
        return Err(Error::invalid_input(format!(
            "length {length} exceeds l_max {}",
            params.l_max
        )));
    }
    let f = if length == params.l_max {
        params.r_exceed
    } else if outcome.correct() {
        cos_fn(
            f64::from(length),
            f64::from(params.l_max),
            params.rl_correct,
            params.r0_correct,
        )?
    } else {
        cos_fn(
            f64::from(length),
            f64::from(params.l_max),
            params.rl_wrong,
            params.r0_wrong,
        )?
    };
    Ok(outcome.value() + alpha * f)
}

/// Kimi-style group length reward.
///
/// `lambda = 0.5 - (L - min L) / (max L - min L)` over the group; correct answers
/// get `lambda`, wrong ones `min(0, lambda)`. A group where every response has the
/// same length carries no length signal and gets `lambda = 0`.
pub fn kimi_rewards(
    group_outcomes: &[OutcomeReward],
    group_lengths: &[u32],
    alpha: f64,
) -> Result<Vec<f64>> {
    if group_outcomes.len() != group_lengths.len() {
        return Err(Error::invalid_input(format!(
            "kimi: {} outcomes but {} lengths",
            group_outcomes.len(),
            group_lengths.len()
        )));
    }
    if group_outcomes.is_empty() {
        return Err(Error::invalid_input("kimi: empty group"));
    }
    let min = *group_lengths.iter().min().unwrap_or(&0);
    let max = *group_lengths.iter().max().unwrap_or(&0);
    let span = f64::from(max - min);
    Ok(group_outcomes
        .iter()
        .zip(group_lengths)
        .map(|(o, &len)| {
            let lambda = if max == min {
                0.0
            } else {
                0.5 - f64::from(len - min) / span
            };
            let f = if o.correct() { lambda } else { lambda.min(0.0) };
            o.value() + alpha * f
        })
        .collect())
}

/// Shapes one group's rewards according to `config`.
///
/// `step` is the global optimizer step feeding the annealing coefficient.
pub fn shape_group(
    outcomes: &[OutcomeReward],
    scores: &[ConcisenessScore],
    lengths: &[u32],
    config: &RewardConfig,
    step: u64,
) -> Result<Vec<f64>> {
    let g = outcomes.len();
    if scores.len() != g || lengths.len() != g {
        return Err(Error::invalid_input(format!(
            "shape_group: {} outcomes, {} scores, {} lengths",
            g,
            scores.len(),
            lengths.len()
        )));
    }
    if g == 0 {
        return Err(Error::invalid_input("shape_group: empty group"));
    }
    let alpha = config.alpha;
    let gated_all = |weight: f64| -> Result<Vec<f64>> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::invalid_input(format!("alpha must be >= 0, got {alpha}")));
        }
        Ok(outcomes
            .iter()
            .zip(scores)
            .map(|(&o, &c)| gated(o, c, alpha, weight))
            .collect())
    };
    match config.kind {
        RewardKind::Outcome => Ok(outcomes.iter().map(|o| o.value()).collect()),
        RewardKind::Crf | RewardKind::WeightedSum => {
            let s = annealing_coeff(step, config.total_steps)?;
            let d = difficulty_coeff(outcomes)?;
            let f = if config.kind == RewardKind::Crf {
                crf_reward
            } else {
                weighted_sum_reward
            };
            outcomes
                .iter()
                .zip(scores)
                .map(|(&o, &c)| f(o, c, alpha, s, d))
                .collect()
        }
        RewardKind::CrfNoAnneal => gated_all(difficulty_coeff(outcomes)?),
        RewardKind::CrfNoDifficulty => gated_all(annealing_coeff(step, config.total_steps)?),
        RewardKind::CrfNoAnnealNoDifficulty => gated_all(1.0),
        RewardKind::Cosine => outcomes
            .iter()
            .zip(lengths)
            .map(|(&o, &len)| cosine_reward(o, len, &config.cosine, alpha))
            .collect(),
        RewardKind::Kimi => kimi_rewards(outcomes, lengths, alpha),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> ConcisenessScore {
        ConcisenessScore::snap(v).unwrap()
    }

    const YES: OutcomeReward = OutcomeReward(true);
    const NO: OutcomeReward = OutcomeReward(false);

    #[test]
    fn outcome_values() {
        assert_eq!(outcome_reward(true).value(), 1.0);
        assert_eq!(outcome_reward(false).value(), 0.0);
        assert!(OutcomeReward::from_value(0.5).is_err());
    }

    #[test]
    fn score_snapping() {
        assert_eq!(c(0.35).tenths(), 4);
        assert_eq!(c(0.34).tenths(), 3);
        assert_eq!(c(0.0).tenths(), 1);
        assert_eq!(c(7.0).tenths(), 10);
        assert_eq!(c(0.3).value(), 0.3);
        assert!(ConcisenessScore::snap(f64::NAN).is_err());
        assert!(ConcisenessScore::from_tenths(0).is_err());
    }

    #[test]
    fn annealing_examples() {
        assert_eq!(annealing_coeff(0, 100).unwrap(), 1.0);
        assert!((annealing_coeff(100, 100).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-12);
        assert!((annealing_coeff(50, 100).unwrap() - 0.606_530_659_712_633_4).abs() < 1e-12);
        assert!(matches!(annealing_coeff(1, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn difficulty_examples() {
        assert!((difficulty_coeff(&[YES; 8]).unwrap() - E).abs() < 1e-12);
        assert_eq!(difficulty_coeff(&[NO; 8]).unwrap(), 1.0);
        let half = [YES, NO, YES, NO, YES, NO, YES, NO];
        assert!((difficulty_coeff(&half).unwrap() - 1.648_721_270_700_128_1).abs() < 1e-12);
        assert!(difficulty_coeff(&[]).is_err());
    }

    #[test]
    fn crf_examples() {
        assert_eq!(crf_reward(NO, c(0.9), 1.0, 1.0, E).unwrap(), 0.0);
        assert_eq!(crf_reward(YES, c(0.3), 0.0, 0.7, 2.0).unwrap(), 1.0);
        assert!((crf_reward(YES, c(0.5), 1.0, 0.5, 2.0).unwrap() - 2.25).abs() < 1e-12);
        assert!(crf_reward(YES, c(0.5), 1.0, 0.0, 2.0).is_err());
        assert!(crf_reward(YES, c(0.5), 1.0, 0.5, 0.5).is_err());
        assert!(crf_reward(YES, c(0.5), -1.0, 0.5, 1.5).is_err());
    }

    #[test]
    fn weighted_sum_examples() {
        let v = weighted_sum_reward(NO, c(0.9), 1.0, 1.0, E).unwrap();
        assert!((v - 3.346_453_645_613_375).abs() < 1e-12);
        assert_eq!(weighted_sum_reward(YES, c(0.2), 0.0, 1.0, 1.0).unwrap(), 1.0);
        assert!((weighted_sum_reward(YES, c(0.5), 1.0, 0.5, 2.0).unwrap() - 2.25).abs() < 1e-12);
    }

    #[test]
    fn cos_fn_examples() {
        assert!((cos_fn(0.0, 10.0, -3.0, 5.0).unwrap() - 5.0).abs() < 1e-12);
        assert!((cos_fn(10.0, 10.0, -3.0, 5.0).unwrap() + 3.0).abs() < 1e-12);
        assert!((cos_fn(5.0, 10.0, 0.0, 2.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(cos_fn(10.5, 10.0, 0.0, 1.0).is_err());
        assert!(cos_fn(-0.1, 10.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn cosine_reward_cases() {
        let p = CosineParams::default();
        let capped = cosine_reward(YES, p.l_max, &p, 0.7).unwrap();
        assert!((capped - (1.0 + 0.7 * p.r_exceed)).abs() < 1e-12);
        // Length 1 of 512 is as close to the t -> 0 limit as integer lengths get.
        let short = cosine_reward(YES, 1, &p, 1.0).unwrap();
        assert!((short - 3.0).abs() < 1e-4);
        assert_eq!(cosine_reward(NO, p.l_max / 2, &p, 0.0).unwrap(), 0.0);
        assert!(cosine_reward(YES, p.l_max + 1, &p, 1.0).is_err());
    }

    #[test]
    fn kimi_cases() {
        let r = kimi_rewards(&[YES, YES, NO], &[10, 30, 10], 2.0).unwrap();
        assert!((r[0] - 2.0).abs() < 1e-12);
        assert!((r[1] - 0.0).abs() < 1e-12);
        assert_eq!(r[2], 0.0);
        let flat = kimi_rewards(&[YES, NO], &[7, 7], 1.0).unwrap();
        assert_eq!(flat, vec![1.0, 0.0]);
        assert!(kimi_rewards(&[YES], &[1, 2], 1.0).is_err());
    }

    #[test]
    fn shape_group_dispatch() {
        let outcomes = [YES, NO, YES];
        let scores = [c(0.4), c(0.9), c(1.0)];
        let lengths = [10, 20, 30];
        let out = shape_group(&outcomes, &scores, &lengths, &RewardConfig::new(RewardKind::Outcome), 5)
            .unwrap();
        assert_eq!(out, vec![1.0, 0.0, 1.0]);

        let all = [YES; 8];
        let ones = [c(1.0); 8];
        let crf = shape_group(&all, &ones, &[50; 8], &RewardConfig::new(RewardKind::Crf), 0).unwrap();
        for v in crf {
            assert!((v - 4.718_281_828_459_045).abs() < 1e-12);
        }

        let plain = RewardConfig::new(RewardKind::CrfNoAnnealNoDifficulty);
        let v = shape_group(&[YES], &[c(0.6)], &[3], &plain, 17).unwrap();
        assert!((v[0] - 1.6).abs() < 1e-12);

        let no_ann = RewardConfig::new(RewardKind::CrfNoAnneal);
        let v = shape_group(&all, &ones, &[5; 8], &no_ann, 0).unwrap();
        assert!((v[0] - (1.0 + E)).abs() < 1e-12);

        let no_dif = RewardConfig::new(RewardKind::CrfNoDifficulty).with_total_steps(10);
        let v = shape_group(&all, &ones, &[5; 8], &no_dif, 10).unwrap();
        assert!((v[0] - (1.0 + (-1.0f64).exp())).abs() < 1e-12);

        assert!(shape_group(&outcomes, &scores[..2], &lengths, &plain, 0).is_err());
    }
}
