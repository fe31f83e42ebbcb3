//! Monte-Carlo variance of the batch policy gradient under different rewards.
//!
//! All rewards are probed on the same random streams, so the batch gradients
//! for two reward configurations are paired draw by draw. That pairing is what
//! the `η̂` bootstrap resamples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::grpo::accumulate_surrogate_gradient;
use crate::policy::{Matrix, PolicyParams};
use crate::reward::{RewardConfig, RewardKind};
use crate::rng::{mix, stream, Purpose};
use crate::stats::{bootstrap, percentile_interval, Interval};
use crate::train::draw_shaped_group;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceProbe {
    /// Training step fed to the annealing coefficient.
    pub step: u64,
    /// Number of independent batch gradients `M`.
    pub batches: usize,
    pub groups_per_batch: usize,
    pub group_size: usize,
    pub seed: u64,
    pub bootstrap_resamples: usize,
    /// Responses used for the `Cov(R°, c)` estimate.
    pub cov_samples: usize,
}

impl Default for VarianceProbe {
    fn default() -> Self {
        Self {
            step: 0,
            batches: 200,
            groups_per_batch: 16,
            group_size: 8,
            seed: 0,
            bootstrap_resamples: 1000,
            cov_samples: 50_000,
        }
    }
}

impl VarianceProbe {
    pub fn validate(&self) -> Result<()> {
        if self.batches < 50 {
            return Err(Error::invalid_config(format!(
                "variance probe needs at least 50 batches, got {}",
                self.batches
            )));
        }
        if self.groups_per_batch == 0 || self.group_size < 2 {
            return Err(Error::invalid_config(
                "variance probe needs groups_per_batch >= 1 and group_size >= 2",
            ));
        }
        if self.bootstrap_resamples < 10 {
            return Err(Error::invalid_config("bootstrap_resamples must be >= 10"));
        }
        if self.cov_samples < 1000 {
            return Err(Error::invalid_config("cov_samples must be >= 1000"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePolicy {
    pub label: String,
    pub policy: PolicyParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEntry {
    pub label: String,
    pub kind: RewardKind,
    pub rho: f64,
    pub probe: String,
    /// `(1/M) Σ ||g_m − ḡ||²`
    pub var_estimate: f64,
    pub bootstrap_ci_95: Interval,
    pub n_batches: usize,
    pub measured_cov: f64,
    pub measured_cov_se: f64,
    pub sigma_g_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaEntry {
    pub label: String,
    pub rho: f64,
    pub probe: String,
    /// `1 − Var[shaped] / Var[outcome]`
    pub eta_hat: f64,
    pub bootstrap_ci_95: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub entries: Vec<VarianceEntry>,
    pub eta: Vec<EtaEntry>,
}

impl VarianceReport {
    /// `η̂` for `label` at `probe`, ordered by `rho`.
    pub fn eta_series(&self, label: &str, probe: &str) -> Vec<(f64, f64)> {
        let mut s: Vec<(f64, f64)> = self
            .eta
            .iter()
            .filter(|e| e.label == label && e.probe == probe)
            .map(|e| (e.rho, e.eta_hat))
            .collect();
        s.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        s
    }

    pub fn entry(&self, label: &str, probe: &str, rho: f64) -> Option<&VarianceEntry> {
        self.entries
            .iter()
            .find(|e| e.label == label && e.probe == probe && e.rho == rho)
    }
}

/// Draws `M` flattened batch gradients at `policy` (ratio 1, no clipping).
pub fn batch_gradients(
    env: &Environment,
    policy: &PolicyParams,
    reward: &RewardConfig,
    probe: &VarianceProbe,
) -> Result<Vec<Vec<f64>>> {
    let probs = policy.prob_table();
    let (rows, cols) = probs.shape();
    let seed = mix(probe.seed, &[env.config().seed_salt]);
    let gpb = probe.groups_per_batch;
    (0..probe.batches)
        .into_par_iter()
        .map(|m| {
            let mut grad = Matrix::zeros(rows, cols);
            for j in 0..gpb {
                let mut rng = stream(seed, Purpose::Variance, m as u64, j as u64);
                let id = (m * gpb + j) as u64;
                let g = draw_shaped_group(env, &probs, reward, probe.step, probe.group_size, id, &mut rng)?;
                accumulate_surrogate_gradient(
                    probs.row(g.rollout.bucket),
                    &g.rollout,
                    &g.advantages,
                    f64::INFINITY,
                    1.0 / gpb as f64,
                    &mut grad,
                )?;
            }
            Ok(grad.as_slice().to_vec())
        })
        .collect()
}

/// Mean squared distance of the selected gradients from their mean.
pub fn spread(grads: &[Vec<f64>], idx: &[usize]) -> f64 {
    let dim = grads[0].len();
    let n = idx.len() as f64;
    let mut centre = vec![0.0; dim];
    for &i in idx {
        for (c, v) in centre.iter_mut().zip(&grads[i]) {
            *c += v / n;
        }
    }
    idx.iter()
        .map(|&i| {
            grads[i]
                .iter()
                .zip(&centre)
                .map(|(v, c)| (v - c).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n
}

fn all_indices(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn variance_ci(grads: &[Vec<f64>], probe: &VarianceProbe, seed: u64, estimate: f64) -> Interval {
    let mut rng = stream(seed, Purpose::Bootstrap, 0, 0);
    let reps = bootstrap(grads.len(), probe.bootstrap_resamples, &mut rng, |idx| {
        spread(grads, idx)
    });
    let ci = percentile_interval(&reps, 0.95);
    Interval {
        low: ci.low.min(estimate),
        high: ci.high.max(estimate),
    }
}

/// Gradient variance of `reward` at a fixed `policy`, with a bootstrap 95% CI
/// and the measured `Cov(R°, c)` at that policy.
pub fn gradient_variance(
    env: &Environment,
    policy: &PolicyParams,
    reward: &RewardConfig,
    label: &str,
    probe_label: &str,
    probe: &VarianceProbe,
) -> Result<VarianceEntry> {
    probe.validate()?;
    reward.validate()?;
    let grads = batch_gradients(env, policy, reward, probe)?;
    let cov = env.covariance(policy, probe.cov_samples, probe.seed)?;
    Ok(entry_from(env, reward, label, probe_label, probe, &grads, cov))
}

fn entry_from(
    env: &Environment,
    reward: &RewardConfig,
    label: &str,
    probe_label: &str,
    probe: &VarianceProbe,
    grads: &[Vec<f64>],
    cov: crate::env::CovarianceEstimate,
) -> VarianceEntry {
    let var = spread(grads, &all_indices(grads.len()));
    VarianceEntry {
        label: label.to_string(),
        kind: reward.kind,
        rho: env.config().correlation,
        probe: probe_label.to_string(),
        var_estimate: var,
        bootstrap_ci_95: variance_ci(grads, probe, probe.seed, var),
        n_batches: grads.len(),
        measured_cov: cov.cov,
        measured_cov_se: cov.std_error,
        sigma_g_sq: var,
    }
}

/// Crosses correlation settings × probe policies × reward configurations.
///
/// `rhos` empty means "use the correlation in `env_config`"; `probes` empty
/// means the uniform policy. `rewards` must contain an outcome-only entry,
/// which is the reference for `η̂`.
pub fn variance_reduction_sweep(
    env_config: &EnvConfig,
    rhos: &[f64],
    probes: &[ProbePolicy],
    rewards: &[(String, RewardConfig)],
    probe: &VarianceProbe,
) -> Result<VarianceReport> {
    probe.validate()?;
    let reference = rewards
        .iter()
        .position(|(_, r)| r.kind == RewardKind::Outcome)
        .ok_or_else(|| Error::invalid_config("variance sweep needs an outcome reward entry"))?;
    for (_, r) in rewards {
        r.validate()?;
    }
    let rho_list: Vec<f64> = if rhos.is_empty() {
        vec![env_config.correlation]
    } else {
        rhos.to_vec()
    };

    let mut entries = Vec::new();
    let mut eta = Vec::new();
    for &rho in &rho_list {
        let env = Environment::new(env_config.with_correlation(rho))?;
        let probe_list = if probes.is_empty() {
            vec![ProbePolicy {
                label: "uniform".into(),
                policy: env.uniform_policy(),
            }]
        } else {
            probes.to_vec()
        };
        for p in &probe_list {
            let cov = env.covariance(&p.policy, probe.cov_samples, probe.seed)?;
            let grads: Vec<Vec<Vec<f64>>> = rewards
                .iter()
                .map(|(_, r)| batch_gradients(&env, &p.policy, r, probe))
                .collect::<Result<_>>()?;
            for ((label, r), g) in rewards.iter().zip(&grads) {
                entries.push(entry_from(&env, r, label, &p.label, probe, g, cov));
            }
            let base = &grads[reference];
            let base_var = spread(base, &all_indices(base.len()));
            for (i, ((label, _), g)) in rewards.iter().zip(&grads).enumerate() {
                if i == reference {
                    continue;
                }
                let v = spread(g, &all_indices(g.len()));
                let eta_hat = 1.0 - v / base_var;
                let mut rng = stream(probe.seed, Purpose::Bootstrap, 1, 0);
                let reps = bootstrap(g.len(), probe.bootstrap_resamples, &mut rng, |idx| {
                    1.0 - spread(g, idx) / spread(base, idx)
                });
                let ci = percentile_interval(&reps, 0.95);
                eta.push(EtaEntry {
                    label: label.clone(),
                    rho,
                    probe: p.label.clone(),
                    eta_hat,
                    bootstrap_ci_95: Interval {
                        low: ci.low.min(eta_hat),
                        high: ci.high.max(eta_hat),
                    },
                });
            }
        }
    }
    Ok(VarianceReport { entries, eta })
}
