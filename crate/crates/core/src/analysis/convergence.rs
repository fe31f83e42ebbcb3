//! Running mean of the squared true-gradient norm along a training run, and
//! the measured-surrogate upper bound it is checked against.

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::grpo::{LrSchedule, OptimizerConfig};
use crate::reward::RewardConfig;
use crate::rng::mix;
use crate::stats::{ls_slope, sign_test, SignTest};
use crate::train::{train, true_gradient_estimate, RunSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(rename = "T")]
    pub t: u64,
    pub running_mean_grad_sq: f64,
}

/// Per-run measurements before the cross-seed `J*` is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRun {
    pub label: String,
    pub seed: u64,
    pub alpha: f64,
    pub questions_per_step: usize,
    /// Debiased `||∇J(θ_t)||²` for each oracle step.
    pub grad_sq: Vec<f64>,
    /// Objective `J(θ_t)` for each oracle step.
    pub objective: Vec<f64>,
    /// Max over steps of the batch-gradient variance.
    pub sigma_g_sq: f64,
    /// Max over steps of `||∇J||²`.
    pub g_sq: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub loglog_slope: f64,
}

impl ConvergenceRun {
    pub fn final_running_mean(&self) -> f64 {
        self.checkpoints.last().map_or(0.0, |c| c.running_mean_grad_sq)
    }

    pub fn best_objective(&self) -> f64 {
        self.objective.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bound curve for a given `J*`; `None` when the learning rate is zero.
    pub fn bound_curve(&self, j_star: f64) -> Option<Vec<f64>> {
        if self.alpha <= 0.0 {
            return None;
        }
        let a = self.alpha;
        let gap = (j_star - self.objective[0]).max(0.0);
        let num = 2.0 * gap + a * a * self.g_sq + a * a * self.sigma_g_sq;
        Some(
            self.checkpoints
                .iter()
                .map(|c| num / (a * (c.t as f64).sqrt()))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub label: String,
    pub seed: u64,
    pub checkpoints: Vec<Checkpoint>,
    pub loglog_slope: f64,
    pub bound_curve: Vec<f64>,
    pub bound_holds: bool,
    pub j_star: f64,
    pub sigma_g_sq: f64,
    pub g_sq: f64,
}

impl ConvergenceReport {
    pub fn final_running_mean(&self) -> f64 {
        self.checkpoints.last().map_or(0.0, |c| c.running_mean_grad_sq)
    }
}

fn validate_checkpoints(checkpoints: &[u64], total_steps: u64) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(Error::invalid_config("convergence needs at least one checkpoint"));
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid_config("checkpoints must be strictly increasing"));
    }
    if checkpoints[0] < 1 || *checkpoints.last().unwrap() > total_steps {
        return Err(Error::invalid_config(format!(
            "checkpoints must lie in [1, {total_steps}]"
        )));
    }
    Ok(())
}

/// Trains one seed, then evaluates the gradient oracle at every logged policy
/// up to the last checkpoint.
pub fn convergence_run(
    env: &Environment,
    label: &str,
    reward: &RewardConfig,
    optimizer: &OptimizerConfig,
    run: &RunSpec,
    checkpoints: &[u64],
    oracle_samples: usize,
) -> Result<ConvergenceRun> {
    if optimizer.schedule != LrSchedule::InvSqrt {
        return Err(Error::invalid_config(
            "convergence analysis needs the inverse square-root learning-rate schedule",
        ));
    }
    validate_checkpoints(checkpoints, run.total_steps)?;
    let horizon = *checkpoints.last().unwrap();
    let short = RunSpec {
        total_steps: horizon,
        ..*run
    };
    let out = train(env, reward, optimizer, &short, true)?;
    let oracle_seed = mix(run.seed, &[0x00c0_ac1e]);

    let mut grad_sq = Vec::with_capacity(horizon as usize);
    let mut objective = Vec::with_capacity(horizon as usize);
    let mut sigma_g_sq: f64 = 0.0;
    for (t, theta) in out.history.policies.iter().enumerate() {
        let est = true_gradient_estimate(
            env,
            theta,
            reward,
            t as u64,
            run.group_size,
            oracle_samples,
            oracle_seed,
        )?;
        grad_sq.push(est.debiased_norm_sq());
        objective.push(est.mean_reward);
        sigma_g_sq = sigma_g_sq.max(est.single_group_variance / run.questions_per_step as f64);
    }
    let g_sq = grad_sq.iter().copied().fold(0.0, f64::max);

    let mut points = Vec::with_capacity(checkpoints.len());
    let mut acc = 0.0;
    let mut next = 0;
    for (i, v) in grad_sq.iter().enumerate() {
        acc += v;
        let t = i as u64 + 1;
        if checkpoints[next] == t {
            points.push(Checkpoint {
                t,
                running_mean_grad_sq: (acc / t as f64).max(0.0),
            });
            next += 1;
            if next == checkpoints.len() {
                break;
            }
        }
    }
    let loglog_slope = loglog_slope(&points);
    Ok(ConvergenceRun {
        label: label.to_string(),
        seed: run.seed,
        alpha: optimizer.base_lr,
        questions_per_step: run.questions_per_step,
        grad_sq,
        objective,
        sigma_g_sq,
        g_sq,
        checkpoints: points,
        loglog_slope,
    })
}

/// Slope of `ln(running mean)` against `ln(T)`; zero with fewer than two points.
pub fn loglog_slope(points: &[Checkpoint]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let xs: Vec<f64> = points.iter().map(|c| (c.t as f64).ln()).collect();
    let ys: Vec<f64> = points
        .iter()
        .map(|c| c.running_mean_grad_sq.max(f64::MIN_POSITIVE).ln())
        .collect();
    ls_slope(&xs, &ys)
}

/// Attaches bound curves. `J*` is the best objective observed across all runs
/// sharing a label.
pub fn assemble_convergence(runs: &[ConvergenceRun]) -> Result<Vec<ConvergenceReport>> {
    runs.iter()
        .map(|r| {
            let j_star = runs
                .iter()
                .filter(|o| o.label == r.label)
                .map(ConvergenceRun::best_objective)
                .fold(f64::NEG_INFINITY, f64::max);
            let bound_curve = r.bound_curve(j_star).ok_or_else(|| {
                Error::invalid_config("the convergence bound is undefined for a zero learning rate")
            })?;
            let bound_holds = r
                .checkpoints
                .iter()
                .zip(&bound_curve)
                .all(|(c, b)| c.running_mean_grad_sq <= *b);
            Ok(ConvergenceReport {
                label: r.label.clone(),
                seed: r.seed,
                checkpoints: r.checkpoints.clone(),
                loglog_slope: r.loglog_slope,
                bound_curve,
                bound_holds,
                j_star,
                sigma_g_sq: r.sigma_g_sq,
                g_sq: r.g_sq,
            })
        })
        .collect()
}

/// Paired one-sided sign test on final running means, matched by seed.
/// A win is a strictly smaller value for `label_a`.
pub fn compare_final(reports: &[ConvergenceReport], label_a: &str, label_b: &str) -> SignTest {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for ra in reports.iter().filter(|r| r.label == label_a) {
        if let Some(rb) = reports.iter().find(|r| r.label == label_b && r.seed == ra.seed) {
            a.push(ra.final_running_mean());
            b.push(rb.final_running_mean());
        }
    }
    sign_test(&a, &b, |x, y| x < y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_with(alpha: f64, objective: Vec<f64>, checkpoints: Vec<Checkpoint>) -> ConvergenceRun {
        ConvergenceRun {
            label: "x".into(),
            seed: 0,
            alpha,
            questions_per_step: 4,
            grad_sq: vec![],
            objective,
            sigma_g_sq: 0.5,
            g_sq: 2.0,
            checkpoints,
            loglog_slope: 0.0,
        }
    }

    #[test]
    fn bound_curve_by_hand() {
        let cps = vec![
            Checkpoint { t: 1, running_mean_grad_sq: 1.0 },
            Checkpoint { t: 4, running_mean_grad_sq: 0.5 },
        ];
        let r = run_with(2.0, vec![1.0, 3.0], cps);
        // (2*(4-1) + 4*2 + 4*0.5) / (2*sqrt(T)) = 16 / (2 sqrt T)
        let b = r.bound_curve(4.0).unwrap();
        assert!((b[0] - 8.0).abs() < 1e-12);
        assert!((b[1] - 4.0).abs() < 1e-12);
        assert!(r.bound_curve(0.5).unwrap()[0] > 0.0);
        assert!(run_with(0.0, vec![1.0], vec![]).bound_curve(1.0).is_none());
    }

    #[test]
    fn slope_of_power_law() {
        let cps: Vec<Checkpoint> = [64u64, 128, 256, 512]
            .iter()
            .map(|&t| Checkpoint { t, running_mean_grad_sq: 3.0 * (t as f64).powf(-0.5) })
            .collect();
        assert!((loglog_slope(&cps) + 0.5).abs() < 1e-12);
        assert_eq!(loglog_slope(&cps[..1]), 0.0);
    }

    #[test]
    fn checkpoint_validation() {
        assert!(validate_checkpoints(&[], 10).is_err());
        assert!(validate_checkpoints(&[0, 2], 10).is_err());
        assert!(validate_checkpoints(&[2, 2], 10).is_err());
        assert!(validate_checkpoints(&[2, 11], 10).is_err());
        assert!(validate_checkpoints(&[1, 10], 10).is_ok());
    }
}
