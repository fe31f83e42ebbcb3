use crflab_core::analysis::{gradient_variance, variance_reduction_sweep, VarianceProbe};
use crflab_core::{EnvConfig, Environment, PolicyParams, RewardConfig, RewardKind};

/// Exact single-group gradient variance for the outcome reward with groups of
/// two, by enumerating bucket, both templates and both outcomes.
fn exact_pair_variance(env: &Environment, policy: &PolicyParams, eps: f64) -> f64 {
    let b_count = env.num_buckets();
    let k = env.num_templates();
    let a = 0.5 / (0.5 + eps);
    let mut mean = vec![0.0; b_count * k];
    let mut second = 0.0;
    for b in 0..b_count {
        let pb = 1.0 / b_count as f64;
        let pi = policy.probs(b);
        let p: Vec<f64> = env.templates(b).iter().map(|t| t.p_correct).collect();
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                // Sample one right and sample two wrong gives (a/2)(e_i - e_j); the
                // mirrored outcome gives the negative.
                let w = pb * pi[i] * pi[j];
                let net = p[i] * (1.0 - p[j]) - (1.0 - p[i]) * p[j];
                mean[b * k + i] += w * net * a / 2.0;
                mean[b * k + j] -= w * net * a / 2.0;
                let mixed = p[i] * (1.0 - p[j]) + (1.0 - p[i]) * p[j];
                second += w * mixed * 2.0 * (a / 2.0).powi(2);
            }
        }
    }
    second - mean.iter().map(|m| m * m).sum::<f64>()
}

fn probe(batches: usize, groups: usize, group_size: usize) -> VarianceProbe {
    VarianceProbe {
        batches,
        groups_per_batch: groups,
        group_size,
        seed: 9,
        bootstrap_resamples: 200,
        cov_samples: 1000,
        ..VarianceProbe::default()
    }
}

#[test]
fn matches_exact_enumeration() {
    let env = Environment::new(EnvConfig::default().with_correlation(0.8)).unwrap();
    let policy = env.initial_policy();
    let reward = RewardConfig::new(RewardKind::Outcome);
    let m = 4000;
    let n = 4;
    let e = gradient_variance(&env, &policy, &reward, "outcome", "uniform", &probe(m, n, 2)).unwrap();
    let exact = exact_pair_variance(&env, &policy, reward.adv_epsilon) / n as f64 * (m as f64 - 1.0) / m as f64;
    assert!((e.var_estimate / exact - 1.0).abs() < 0.1, "{} vs {exact}", e.var_estimate);
}

#[test]
fn doubling_groups_halves_variance() {
    let env = Environment::new(EnvConfig::default()).unwrap();
    let policy = env.uniform_policy();
    let reward = RewardConfig::new(RewardKind::Crf);
    let a = gradient_variance(&env, &policy, &reward, "crf", "uniform", &probe(1000, 8, 8)).unwrap();
    let b = gradient_variance(&env, &policy, &reward, "crf", "uniform", &probe(1000, 16, 8)).unwrap();
    let ratio = b.var_estimate / a.var_estimate;
    assert!((ratio - 0.5).abs() < 0.125, "ratio {ratio}");
}

#[test]
fn deterministic_env_has_zero_variance() {
    let env = Environment::new(EnvConfig {
        correlation: 0.0,
        accuracy_easy: 1.0,
        accuracy_hard: 1.0,
        length_noise_sd: 0.0,
        ..EnvConfig::default()
    })
    .unwrap();
    let mut policy = env.uniform_policy();
    for b in 0..env.num_buckets() {
        *policy.logits.get_mut(b, 2) = 1000.0;
    }
    for kind in [RewardKind::Outcome, RewardKind::Crf, RewardKind::WeightedSum] {
        let e = gradient_variance(&env, &policy, &RewardConfig::new(kind), "x", "p", &probe(50, 4, 8)).unwrap();
        assert_eq!(e.var_estimate, 0.0, "{kind:?}");
    }
}

#[test]
fn sweep_shapes_and_repeatability() {
    let cfg = EnvConfig::default();
    let p = probe(60, 4, 8);
    let only = vec![("outcome".to_string(), RewardConfig::new(RewardKind::Outcome))];
    let r = variance_reduction_sweep(&cfg, &[], &[], &only, &p).unwrap();
    assert_eq!(r.entries.len(), 1);
    assert!(r.eta.is_empty());

    let twice = vec![
        ("outcome".to_string(), RewardConfig::new(RewardKind::Outcome)),
        ("crf_a".to_string(), RewardConfig::new(RewardKind::Crf)),
        ("crf_b".to_string(), RewardConfig::new(RewardKind::Crf)),
    ];
    let r = variance_reduction_sweep(&cfg, &[0.0, 0.4], &[], &twice, &p).unwrap();
    assert_eq!(r.eta.len(), 4);
    for rho in [0.0, 0.4] {
        let a = r.entry("crf_a", "uniform", rho).unwrap();
        let b = r.entry("crf_b", "uniform", rho).unwrap();
        assert_eq!(a.var_estimate, b.var_estimate);
        assert_eq!(a.bootstrap_ci_95, b.bootstrap_ci_95);
    }
    let again = variance_reduction_sweep(&cfg, &[0.0, 0.4], &[], &twice, &p).unwrap();
    assert_eq!(r, again);

    let none = vec![("crf".to_string(), RewardConfig::new(RewardKind::Crf))];
    assert!(variance_reduction_sweep(&cfg, &[], &[], &none, &p).is_err());
}
