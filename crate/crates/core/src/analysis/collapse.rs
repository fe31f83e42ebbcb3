//! Collapse detectors over training curves.
//!
//! Length collapse: the training reward keeps rising while the mean response
//! length falls far below where it started. Training collapse: reward and
//! length fall together and the reward ends well below its peak. The sign of
//! the trailing reward slope separates the two, so a step can never carry both.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{index_slope, mean};
use crate::train::TrainHistory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollapseThresholds {
    /// Trailing window length in steps.
    pub window: usize,
    /// Length collapse needs the window mean below this fraction of the initial window mean.
    pub length_ratio: f64,
    /// Training collapse needs the window mean reward below this fraction of its peak.
    pub reward_peak_fraction: f64,
}

impl Default for CollapseThresholds {
    fn default() -> Self {
        Self {
            window: 200,
            length_ratio: 0.10,
            reward_peak_fraction: 0.5,
        }
    }
}

impl CollapseThresholds {
    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::invalid_config("collapse window must be >= 2"));
        }
        if !(self.length_ratio > 0.0 && self.reward_peak_fraction > 0.0) {
            return Err(Error::invalid_config("collapse thresholds must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseKind {
    None,
    LengthCollapse,
    TrainingCollapse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseEvidence {
    pub reward_slope: f64,
    pub length_slope: f64,
    pub length_ratio_to_initial: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseVerdict {
    pub kind: CollapseKind,
    pub onset_step: Option<u64>,
    pub evidence: CollapseEvidence,
}

impl CollapseVerdict {
    pub fn is_collapse(&self) -> bool {
        self.kind != CollapseKind::None
    }
}

struct Series<'a> {
    steps: Vec<u64>,
    rewards: Vec<f64>,
    lengths: Vec<f64>,
    thresholds: &'a CollapseThresholds,
    initial_length: f64,
}

impl<'a> Series<'a> {
    fn new(history: &TrainHistory, thresholds: &'a CollapseThresholds) -> Result<Self> {
        thresholds.validate()?;
        let w = thresholds.window;
        if history.len() < 2 * w {
            return Err(Error::invalid_input(format!(
                "history has {} steps, collapse detection needs at least {}",
                history.len(),
                2 * w
            )));
        }
        let lengths = history.lengths();
        Ok(Self {
            steps: history.records.iter().map(|r| r.step).collect(),
            rewards: history.shaped_rewards(),
            initial_length: mean(&lengths[..w]),
            lengths,
            thresholds,
        })
    }

    /// Trailing windows ending at `end` (inclusive), starting once the window clears the initial one.
    fn windows(&self) -> impl Iterator<Item = usize> + '_ {
        let w = self.thresholds.window;
        (2 * w - 1)..self.rewards.len()
    }

    fn evidence(&self, end: usize) -> CollapseEvidence {
        let w = self.thresholds.window;
        let lo = end + 1 - w;
        CollapseEvidence {
            reward_slope: index_slope(&self.rewards[lo..=end]),
            length_slope: index_slope(&self.lengths[lo..=end]),
            length_ratio_to_initial: mean(&self.lengths[lo..=end]) / self.initial_length,
        }
    }

    fn verdict(&self, kind: CollapseKind, end: Option<usize>) -> CollapseVerdict {
        let at = end.unwrap_or(self.rewards.len() - 1);
        CollapseVerdict {
            kind,
            onset_step: end.map(|e| self.steps[e]),
            evidence: self.evidence(at),
        }
    }
}

fn scan_length(s: &Series) -> Option<usize> {
    s.windows().find(|&end| {
        let e = s.evidence(end);
        e.reward_slope >= 0.0
            && e.length_slope < 0.0
            && e.length_ratio_to_initial < s.thresholds.length_ratio
    })
}

fn scan_training(s: &Series) -> Option<usize> {
    let w = s.thresholds.window;
    let mut peak = f64::NEG_INFINITY;
    // Track the peak of window means seen so far, including the initial window.
    for end in (w - 1)..(2 * w - 1) {
        peak = peak.max(mean(&s.rewards[end + 1 - w..=end]));
    }
    s.windows().find(|&end| {
        let current = mean(&s.rewards[end + 1 - w..=end]);
        peak = peak.max(current);
        let e = s.evidence(end);
        e.reward_slope < 0.0
            && e.length_slope < 0.0
            && current < s.thresholds.reward_peak_fraction * peak
    })
}

pub fn detect_length_collapse(
    history: &TrainHistory,
    thresholds: &CollapseThresholds,
) -> Result<CollapseVerdict> {
    let s = Series::new(history, thresholds)?;
    Ok(match scan_length(&s) {
        Some(end) => s.verdict(CollapseKind::LengthCollapse, Some(end)),
        None => s.verdict(CollapseKind::None, None),
    })
}

pub fn detect_training_collapse(
    history: &TrainHistory,
    thresholds: &CollapseThresholds,
) -> Result<CollapseVerdict> {
    let s = Series::new(history, thresholds)?;
    Ok(match scan_training(&s) {
        Some(end) => s.verdict(CollapseKind::TrainingCollapse, Some(end)),
        None => s.verdict(CollapseKind::None, None),
    })
}

/// Earliest collapse of either kind.
pub fn detect_collapse(
    history: &TrainHistory,
    thresholds: &CollapseThresholds,
) -> Result<CollapseVerdict> {
    let s = Series::new(history, thresholds)?;
    let verdict = match (scan_length(&s), scan_training(&s)) {
        (Some(l), Some(t)) if t < l => s.verdict(CollapseKind::TrainingCollapse, Some(t)),
        (Some(l), _) => s.verdict(CollapseKind::LengthCollapse, Some(l)),
        (None, Some(t)) => s.verdict(CollapseKind::TrainingCollapse, Some(t)),
        (None, None) => s.verdict(CollapseKind::None, None),
    };
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::StepRecord;

    fn history(rewards: &[f64], lengths: &[f64]) -> TrainHistory {
        TrainHistory {
            records: rewards
                .iter()
                .zip(lengths)
                .enumerate()
                .map(|(i, (&r, &l))| StepRecord {
                    step: i as u64,
                    mean_shaped_reward: r,
                    mean_outcome_reward: r,
                    mean_length_tokens: l,
                    accuracy_fraction: 0.5,
                    grad_norm: 0.0,
                    grad_sq_running_mean: 0.0,
                })
                .collect(),
            policies: vec![],
        }
    }

    const W: usize = 20;

    fn th() -> CollapseThresholds {
        CollapseThresholds::default().with_window(W)
    }

    #[test]
    fn flat_curves_are_healthy() {
        let h = history(&[1.0; 200], &[300.0; 200]);
        assert_eq!(detect_length_collapse(&h, &th()).unwrap().kind, CollapseKind::None);
        assert_eq!(detect_training_collapse(&h, &th()).unwrap().kind, CollapseKind::None);
        assert_eq!(detect_collapse(&h, &th()).unwrap().onset_step, None);
    }

    #[test]
    fn rising_reward_falling_length() {
        let n = 200;
        let rewards: Vec<f64> = (0..n).map(|i| 0.2 + 0.004 * i as f64).collect();
        let lengths: Vec<f64> = (0..n).map(|i| 400.0 * (0.02f64).powf(i as f64 / (n - 1) as f64)).collect();
        let h = history(&rewards, &lengths);
        let v = detect_length_collapse(&h, &th()).unwrap();
        assert_eq!(v.kind, CollapseKind::LengthCollapse);
        let onset = v.onset_step.unwrap();
        assert!(onset > 2 * W as u64 && onset < n as u64);
        assert!(v.evidence.length_ratio_to_initial < 0.1);
        assert_ne!(detect_training_collapse(&h, &th()).unwrap().kind, CollapseKind::TrainingCollapse);
    }

    #[test]
    fn peak_then_crash() {
        let n = 240;
        let rewards: Vec<f64> = (0..n)
            .map(|i| if i < 80 { 0.5 + 0.01 * i as f64 } else { 1.3 * (-(i as f64 - 80.0) / 25.0).exp() })
            .collect();
        let lengths: Vec<f64> = (0..n)
            .map(|i| if i < 80 { 300.0 } else { 300.0 * (-(i as f64 - 80.0) / 30.0).exp() + 2.0 })
            .collect();
        let h = history(&rewards, &lengths);
        let v = detect_training_collapse(&h, &th()).unwrap();
        assert_eq!(v.kind, CollapseKind::TrainingCollapse);
        assert!(v.onset_step.unwrap() >= 80);
        assert_eq!(detect_length_collapse(&h, &th()).unwrap().kind, CollapseKind::None);
    }

    #[test]
    fn both_rising_is_healthy() {
        let rewards: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let lengths: Vec<f64> = (0..100).map(|i| 100.0 + i as f64).collect();
        let h = history(&rewards, &lengths);
        assert!(!detect_collapse(&h, &th()).unwrap().is_collapse());
    }

    #[test]
    fn short_history_rejected() {
        let h = history(&[1.0; 30], &[1.0; 30]);
        assert!(matches!(detect_collapse(&h, &th()), Err(Error::InvalidInput(_))));
    }
}
