//! Experiment configuration: TOML or JSON, picked by file extension.

use std::fs;
use std::path::{Path, PathBuf};

use crflab_core::analysis::{CollapseThresholds, VarianceProbe};
use crflab_core::{
    CosineParams, EnvConfig, Environment, Error, OptimizerConfig, RewardConfig, RewardKind,
    RunSpec,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Top-level reward. `total_steps` falls back to `run.total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub kind: RewardKind,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    pub cosine: CosineParams,
    pub adv_epsilon: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        let r = RewardConfig::default();
        Self {
            kind: r.kind,
            alpha: r.alpha,
            total_steps: None,
            cosine: r.cosine,
            adv_epsilon: r.adv_epsilon,
        }
    }
}

impl RewardSection {
    pub fn resolve(&self, run_steps: u64) -> RewardConfig {
        RewardConfig {
            kind: self.kind,
            alpha: self.alpha,
            total_steps: self.total_steps.unwrap_or(run_steps),
            cosine: self.cosine,
            adv_epsilon: self.adv_epsilon,
        }
    }
}

/// A named reward used by the analysis commands. Unset fields inherit from
/// the top-level `[reward]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledReward {
    pub label: String,
    pub kind: RewardKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cosine: Option<CosineParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adv_epsilon: Option<f64>,
}

impl LabeledReward {
    pub fn new(label: &str, kind: RewardKind) -> Self {
        Self {
            label: label.to_string(),
            kind,
            alpha: None,
            total_steps: None,
            cosine: None,
            adv_epsilon: None,
        }
    }

    pub fn resolve(&self, base: &RewardConfig) -> RewardConfig {
        RewardConfig {
            kind: self.kind,
            alpha: self.alpha.unwrap_or(base.alpha),
            total_steps: self.total_steps.unwrap_or(base.total_steps),
            cosine: self.cosine.unwrap_or(base.cosine),
            adv_epsilon: self.adv_epsilon.unwrap_or(base.adv_epsilon),
        }
    }
}

/// Cosine reward tuned to chase brevity: every response, right or wrong,
/// scores more the shorter it is.
pub fn aggressive_cosine() -> LabeledReward {
    LabeledReward {
        alpha: Some(4.0),
        cosine: Some(CosineParams {
            l_max: 512,
            r0_correct: 2.0,
            rl_correct: -2.0,
            r0_wrong: 2.0,
            rl_wrong: -2.0,
            r_exceed: -2.0,
        }),
        ..LabeledReward::new("cosine_aggressive", RewardKind::Cosine)
    }
}

pub fn default_scenarios() -> Vec<LabeledReward> {
    vec![
        LabeledReward::new("weighted_sum", RewardKind::WeightedSum),
        aggressive_cosine(),
        LabeledReward::new("kimi", RewardKind::Kimi),
        LabeledReward::new("crf", RewardKind::Crf),
    ]
}

pub fn default_comparison() -> Vec<LabeledReward> {
    vec![
        LabeledReward::new("outcome", RewardKind::Outcome),
        LabeledReward::new("crf", RewardKind::Crf),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub total_steps: u64,
    pub questions_per_step: usize,
    pub group_size: usize,
    pub seeds: Vec<u64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            questions_per_step: 16,
            group_size: 8,
            seeds: vec![0],
        }
    }
}

impl RunSection {
    pub fn spec(&self, seed: u64) -> RunSpec {
        RunSpec {
            total_steps: self.total_steps,
            questions_per_step: self.questions_per_step,
            group_size: self.group_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceSection {
    pub step: u64,
    pub batches: usize,
    pub groups_per_batch: usize,
    /// Defaults to `run.group_size`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_size: Option<usize>,
    /// Defaults to the first run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub bootstrap_resamples: usize,
    pub cov_samples: usize,
    /// Empty means the correlation in `[env]`.
    pub rhos: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rewards: Option<Vec<LabeledReward>>,
}

impl Default for VarianceSection {
    fn default() -> Self {
        let p = VarianceProbe::default();
        Self {
            step: p.step,
            batches: p.batches,
            groups_per_batch: p.groups_per_batch,
            group_size: None,
            seed: None,
            bootstrap_resamples: p.bootstrap_resamples,
            cov_samples: p.cov_samples,
            rhos: Vec::new(),
            rewards: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    /// Empty means powers of two from 64 up to `run.total_steps`.
    pub checkpoints: Vec<u64>,
    pub oracle_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rewards: Option<Vec<LabeledReward>>,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            oracle_samples: 256,
            rewards: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollapseSection {
    pub window: usize,
    pub length_ratio: f64,
    pub reward_peak_fraction: f64,
    /// Unset means weighted_sum, cosine_aggressive, kimi and crf.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenarios: Option<Vec<LabeledReward>>,
}

impl Default for CollapseSection {
    fn default() -> Self {
        let t = CollapseThresholds::default();
        Self {
            window: t.window,
            length_ratio: t.length_ratio,
            reward_peak_fraction: t.reward_peak_fraction,
            scenarios: None,
        }
    }
}

impl CollapseSection {
    pub fn thresholds(&self) -> CollapseThresholds {
        CollapseThresholds {
            window: self.window,
            length_ratio: self.length_ratio,
            reward_peak_fraction: self.reward_peak_fraction,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub variance: VarianceSection,
    pub convergence: ConvergenceSection,
    pub collapse: CollapseSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub reward: RewardSection,
    pub optimizer: OptimizerConfig,
    pub run: RunSection,
    pub analysis: AnalysisSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Ok(Format::Toml),
            Some("json") => Ok(Format::Json),
            _ => Err(CliError::Parse {
                path: path.to_path_buf(),
                message: "config must have a .toml or .json extension".into(),
            }),
        }
    }
}

pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let format = Format::from_path(path)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let config = parse_config(&text, format).map_err(|message| CliError::Parse {
        path: path.to_path_buf(),
        message,
    })?;
    config.validate()?;
    Ok(config)
}

/// Parses without validating. An empty or whitespace-only document is an error.
pub fn parse_config(text: &str, format: Format) -> Result<ExperimentConfig, String> {
    if text.trim().is_empty() {
        return Err("empty config file".into());
    }
    match format {
        Format::Toml => toml::from_str(text).map_err(|e| e.to_string()),
        Format::Json => serde_json::from_str(text).map_err(|e| e.to_string()),
    }
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = match Format::from_path(path)? {
            Format::Toml => self.to_toml(),
            Format::Json => serde_json::to_string_pretty(self).expect("config serializes to JSON"),
        };
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    /// SHA-256 of the canonical JSON form. The output directory is left out,
    /// so the same experiment hashes the same wherever it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes to JSON");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn reward_config(&self) -> RewardConfig {
        self.reward.resolve(self.run.total_steps)
    }

    pub fn environment(&self) -> CliResult<Environment> {
        Ok(Environment::new(self.env)?)
    }

    pub fn probe(&self) -> VarianceProbe {
        let v = &self.analysis.variance;
        VarianceProbe {
            step: v.step,
            batches: v.batches,
            groups_per_batch: v.groups_per_batch,
            group_size: v.group_size.unwrap_or(self.run.group_size),
            seed: v.seed.unwrap_or(self.run.seeds[0]),
            bootstrap_resamples: v.bootstrap_resamples,
            cov_samples: v.cov_samples,
        }
    }

    pub fn checkpoints(&self) -> Vec<u64> {
        let c = &self.analysis.convergence.checkpoints;
        if !c.is_empty() {
            return c.clone();
        }
        let t = self.run.total_steps;
        let pow: Vec<u64> = (6..64)
            .map(|k| 1u64 << k)
            .take_while(|&p| p <= t)
            .collect();
        if pow.is_empty() {
            vec![t]
        } else {
            pow
        }
    }

    pub fn variance_rewards(&self) -> Vec<(String, RewardConfig)> {
        self.labeled(self.analysis.variance.rewards.clone().unwrap_or_else(default_comparison))
    }

    pub fn convergence_rewards(&self) -> Vec<(String, RewardConfig)> {
        self.labeled(
            self.analysis
                .convergence
                .rewards
                .clone()
                .unwrap_or_else(default_comparison),
        )
    }

    pub fn scenarios(&self) -> Vec<(String, RewardConfig)> {
        self.labeled(
            self.analysis
                .collapse
                .scenarios
                .clone()
                .unwrap_or_else(default_scenarios),
        )
    }

    fn labeled(&self, list: Vec<LabeledReward>) -> Vec<(String, RewardConfig)> {
        let base = self.reward_config();
        list.iter().map(|l| (l.label.clone(), l.resolve(&base))).collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        self.env.validate()?;
        self.reward_config().validate()?;
        self.optimizer.validate()?;
        if self.run.seeds.is_empty() {
            return Err(invalid("run.seeds must list at least one seed"));
        }
        self.run.spec(self.run.seeds[0]).validate()?;
        self.probe().validate()?;
        self.analysis.collapse.thresholds().validate()?;
        if self.analysis.convergence.oracle_samples < 2 {
            return Err(invalid("analysis.convergence.oracle_samples must be >= 2"));
        }
        let lists = [
            ("analysis.variance.rewards", &self.analysis.variance.rewards),
            ("analysis.convergence.rewards", &self.analysis.convergence.rewards),
            ("analysis.collapse.scenarios", &self.analysis.collapse.scenarios),
        ];
        for (field, list) in lists {
            let Some(list) = list else { continue };
            for (i, l) in list.iter().enumerate() {
                if l.label.is_empty() {
                    return Err(invalid(format!("{field}[{i}].label must not be empty")));
                }
                if list[..i].iter().any(|o| o.label == l.label) {
                    return Err(invalid(format!("{field}: duplicate label {:?}", l.label)));
                }
                l.resolve(&self.reward_config())
                    .validate()
                    .map_err(|e| invalid(format!("{field}[{i}]: {e}")))?;
            }
        }
        for rho in &self.analysis.variance.rhos {
            self.env
                .with_correlation(*rho)
                .validate()
                .map_err(|e| invalid(format!("analysis.variance.rhos: {e}")))?;
        }
        Ok(())
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Core(Error::invalid_config(msg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_a_parse_error() {
        assert!(parse_config("", Format::Toml).is_err());
        assert!(parse_config("  \n", Format::Json).is_err());
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse_config("[run]\ntotal_steps = 50\n", Format::Toml).unwrap();
        let r = c.reward_config();
        assert_eq!(r.alpha, 1.0);
        assert_eq!(r.adv_epsilon, 1e-6);
        assert_eq!(r.total_steps, 50);
        assert_eq!(c.run.group_size, 8);
        assert_eq!(c.checkpoints(), vec![50]);
    }

    #[test]
    fn default_checkpoints_are_powers_of_two() {
        let c = parse_config("[run]\ntotal_steps = 2100\n", Format::Toml).unwrap();
        assert_eq!(c.checkpoints(), vec![64, 128, 256, 512, 1024, 2048]);
    }

    #[test]
    fn unknown_field_rejected_with_name() {
        let e = parse_config("[reward]\nalhpa = 2.0\n", Format::Toml).unwrap_err();
        assert!(e.contains("alhpa"), "{e}");
    }

    #[test]
    fn labeled_rewards_inherit() {
        let c = parse_config(
            "[reward]\nalpha = 0.5\n[[analysis.collapse.scenarios]]\nlabel = \"a\"\nkind = \"kimi\"\n",
            Format::Toml,
        )
        .unwrap();
        let s = c.scenarios();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].1.alpha, 0.5);
        assert_eq!(s[0].1.kind, RewardKind::Kimi);
    }

    #[test]
    fn duplicate_labels_rejected() {
        let mut c = ExperimentConfig::default();
        c.analysis.collapse.scenarios = Some(vec![
            LabeledReward::new("x", RewardKind::Crf),
            LabeledReward::new("x", RewardKind::Kimi),
        ]);
        assert_eq!(c.validate().unwrap_err().category(), "invalid-config");
    }
}
