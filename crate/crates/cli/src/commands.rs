//! Subcommand drivers. Each one runs seeds in parallel, collects results in
//! seed order, then writes its files and a `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crflab_core::analysis::{
    assemble_convergence, compare_final, convergence_run, detect_collapse,
    variance_reduction_sweep, CollapseKind, CollapseThresholds, CollapseVerdict,
    ConvergenceReport, VarianceProbe, VarianceReport,
};
use crflab_core::stats::{mean, SignTest};
use crflab_core::{train, Environment, RewardConfig, RewardKind, StepRecord, TrainHistory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const ARTIFACT_VERSION: &str = concat!("crflab/", env!("CARGO_PKG_VERSION"));
pub const OUT_DIR_ENV: &str = "CRFLAB_OUT_DIR";
pub const CURVE_COLUMNS: [&str; 6] = [
    "step",
    "mean_shaped_reward",
    "mean_outcome_reward",
    "mean_length_tokens",
    "accuracy_fraction",
    "grad_norm",
];

/// `--out`, then the config's `output_dir`, then `$CRFLAB_OUT_DIR`, then `./crflab-out`.
pub fn resolve_output_dir(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &config.output_dir {
        return p.clone();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("crflab-out"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub mean_shaped_reward: f64,
    pub mean_outcome_reward: f64,
    pub mean_length_tokens: f64,
    pub accuracy_fraction: f64,
    pub grad_norm: f64,
}

impl From<&StepRecord> for CurveRow {
    fn from(r: &StepRecord) -> Self {
        Self {
            step: r.step,
            mean_shaped_reward: r.mean_shaped_reward,
            mean_outcome_reward: r.mean_outcome_reward,
            mean_length_tokens: r.mean_length_tokens,
            accuracy_fraction: r.accuracy_fraction,
            grad_norm: r.grad_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagRates {
    pub length_collapse: f64,
    pub training_collapse: f64,
    pub any: f64,
}

impl FlagRates {
    pub fn from_verdicts<'a>(verdicts: impl IntoIterator<Item = &'a CollapseVerdict>) -> Option<Self> {
        let kinds: Vec<CollapseKind> = verdicts.into_iter().map(|v| v.kind).collect();
        if kinds.is_empty() {
            return None;
        }
        let n = kinds.len() as f64;
        let rate = |k: CollapseKind| kinds.iter().filter(|&&x| x == k).count() as f64 / n;
        Some(Self {
            length_collapse: rate(CollapseKind::LengthCollapse),
            training_collapse: rate(CollapseKind::TrainingCollapse),
            any: kinds.iter().filter(|k| **k != CollapseKind::None).count() as f64 / n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub curves: String,
    #[serde(rename = "final")]
    pub final_record: StepRecord,
    /// Null when the run is shorter than two collapse windows.
    pub collapse: Option<CollapseVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainAggregate {
    pub n_seeds: usize,
    pub mean_final_accuracy: f64,
    pub mean_final_length_tokens: f64,
    pub mean_final_shaped_reward: f64,
    pub mean_final_outcome_reward: f64,
    pub collapse_flag_rates: Option<FlagRates>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub artifact_version: String,
    pub config_hash: String,
    pub reward: RewardConfig,
    pub thresholds: CollapseThresholds,
    pub seeds: Vec<SeedSummary>,
    pub aggregate: TrainAggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
    pub per_seed_ms: Vec<SeedTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
    pub summary: serde_json::Value,
    /// Wall-clock only; the one part of the outputs that varies between reruns.
    pub timings: Timings,
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes to JSON");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_curves(path: &Path, history: &TrainHistory) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in &history.records {
        w.serialize(CurveRow::from(r)).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_curves(path: &Path) -> CliResult<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != CURVE_COLUMNS {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            message: format!("unexpected curve columns {header:?}"),
        });
    }
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Parse {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn finish(
    out: &Path,
    command: &str,
    config: &ExperimentConfig,
    mut files: Vec<String>,
    summary: serde_json::Value,
    started: Instant,
    per_seed_ms: Vec<SeedTiming>,
) -> CliResult<RunManifest> {
    files.push("manifest.json".into());
    let manifest = RunManifest {
        command: command.to_string(),
        artifact_version: ARTIFACT_VERSION.to_string(),
        config_hash: config.hash(),
        seeds: config.run.seeds.clone(),
        files,
        summary,
        timings: Timings {
            total_ms: ms_since(started),
            per_seed_ms,
        },
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

struct SeedRun {
    seed: u64,
    history: TrainHistory,
    collapse: Option<CollapseVerdict>,
    ms: f64,
}

fn train_seed(
    env: &Environment,
    config: &ExperimentConfig,
    reward: &RewardConfig,
    seed: u64,
    thresholds: &CollapseThresholds,
    require_verdict: bool,
) -> CliResult<SeedRun> {
    let t = Instant::now();
    let out = train(env, reward, &config.optimizer, &config.run.spec(seed), false)?;
    let history = out.history;
    let collapse = if require_verdict || history.len() >= 2 * thresholds.window {
        Some(detect_collapse(&history, thresholds)?)
    } else {
        None
    };
    Ok(SeedRun {
        seed,
        history,
        collapse,
        ms: ms_since(t),
    })
}

/// Trains every seed with the top-level reward and writes `seed_<n>/curves.csv`
/// plus `summary.json`.
pub fn cmd_train(config: &ExperimentConfig, out: &Path) -> CliResult<TrainSummary> {
    let started = Instant::now();
    config.validate()?;
    ensure_dir(out)?;
    let env = config.environment()?;
    let reward = config.reward_config();
    let thresholds = config.analysis.collapse.thresholds();
    let runs: Vec<SeedRun> = config
        .run
        .seeds
        .par_iter()
        .map(|&seed| train_seed(&env, config, &reward, seed, &thresholds, false))
        .collect::<CliResult<_>>()?;

    let mut files = Vec::new();
    let mut seeds = Vec::new();
    for r in &runs {
        let rel = format!("seed_{}/curves.csv", r.seed);
        let dir = out.join(format!("seed_{}", r.seed));
        ensure_dir(&dir)?;
        write_curves(&out.join(&rel), &r.history)?;
        files.push(rel.clone());
        seeds.push(SeedSummary {
            seed: r.seed,
            curves: rel,
            final_record: *r.history.last().expect("at least one step"),
            collapse: r.collapse,
        });
    }
    let finals: Vec<&StepRecord> = seeds.iter().map(|s| &s.final_record).collect();
    let avg = |f: fn(&StepRecord) -> f64| mean(&finals.iter().map(|r| f(r)).collect::<Vec<_>>());
    let verdicts: Vec<&CollapseVerdict> = seeds.iter().filter_map(|s| s.collapse.as_ref()).collect();
    let summary = TrainSummary {
        artifact_version: ARTIFACT_VERSION.to_string(),
        config_hash: config.hash(),
        reward,
        thresholds,
        aggregate: TrainAggregate {
            n_seeds: seeds.len(),
            mean_final_accuracy: avg(|r| r.accuracy_fraction),
            mean_final_length_tokens: avg(|r| r.mean_length_tokens),
            mean_final_shaped_reward: avg(|r| r.mean_shaped_reward),
            mean_final_outcome_reward: avg(|r| r.mean_outcome_reward),
            collapse_flag_rates: if verdicts.len() == seeds.len() {
                FlagRates::from_verdicts(verdicts)
            } else {
                None
            },
        },
        seeds,
    };
    write_json(&out.join("summary.json"), &summary)?;
    files.push("summary.json".into());
    let timings = runs
        .iter()
        .map(|r| SeedTiming { seed: r.seed, label: None, ms: r.ms })
        .collect();
    finish(
        out,
        "train",
        config,
        files,
        serde_json::to_value(&summary.aggregate).unwrap(),
        started,
        timings,
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceOutput {
    pub artifact_version: String,
    pub config_hash: String,
    pub probe: VarianceProbe,
    pub rhos: Vec<f64>,
    pub rewards: Vec<LabeledConfig>,
    #[serde(flatten)]
    pub report: VarianceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledConfig {
    pub label: String,
    pub reward: RewardConfig,
}

fn labeled_configs(list: &[(String, RewardConfig)]) -> Vec<LabeledConfig> {
    list.iter()
        .map(|(label, reward)| LabeledConfig {
            label: label.clone(),
            reward: *reward,
        })
        .collect()
}

pub fn cmd_variance(config: &ExperimentConfig, out: &Path) -> CliResult<VarianceOutput> {
    let started = Instant::now();
    config.validate()?;
    ensure_dir(out)?;
    let probe = config.probe();
    let rewards = config.variance_rewards();
    let rhos = if config.analysis.variance.rhos.is_empty() {
        vec![config.env.correlation]
    } else {
        config.analysis.variance.rhos.clone()
    };
    let report = variance_reduction_sweep(&config.env, &rhos, &[], &rewards, &probe)?;
    let output = VarianceOutput {
        artifact_version: ARTIFACT_VERSION.to_string(),
        config_hash: config.hash(),
        probe,
        rhos,
        rewards: labeled_configs(&rewards),
        report,
    };
    write_json(&out.join("variance_report.json"), &output)?;
    let summary = serde_json::json!({
        "eta": output.report.eta.iter().map(|e| serde_json::json!({
            "label": e.label, "rho": e.rho, "eta_hat": e.eta_hat,
        })).collect::<Vec<_>>(),
    });
    finish(
        out,
        "variance",
        config,
        vec!["variance_report.json".into()],
        summary,
        started,
        Vec::new(),
    )?;
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub label: String,
    pub n_seeds: usize,
    pub mean_final_running_mean: f64,
    pub mean_loglog_slope: f64,
    pub max_loglog_slope: f64,
    pub bound_holds_all: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    /// Wins count seeds where `label_a` ends with the smaller running mean.
    pub label_a: String,
    pub label_b: String,
    #[serde(flatten)]
    pub test: SignTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceOutput {
    pub artifact_version: String,
    pub config_hash: String,
    pub checkpoints: Vec<u64>,
    pub oracle_samples: usize,
    pub rewards: Vec<LabeledConfig>,
    pub runs: Vec<ConvergenceReport>,
    pub per_label: Vec<LabelSummary>,
    /// First shaped reward against the first outcome-only reward; null if either is missing.
    pub comparison: Option<PairedComparison>,
}

pub fn summarize_labels(reports: &[ConvergenceReport], labels: &[String]) -> Vec<LabelSummary> {
    labels
        .iter()
        .map(|label| {
            let rs: Vec<&ConvergenceReport> = reports.iter().filter(|r| &r.label == label).collect();
            let slopes: Vec<f64> = rs.iter().map(|r| r.loglog_slope).collect();
            LabelSummary {
                label: label.clone(),
                n_seeds: rs.len(),
                mean_final_running_mean: mean(
                    &rs.iter().map(|r| r.final_running_mean()).collect::<Vec<_>>(),
                ),
                mean_loglog_slope: mean(&slopes),
                max_loglog_slope: slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                bound_holds_all: rs.iter().all(|r| r.bound_holds),
            }
        })
        .collect()
}

pub fn cmd_converge(config: &ExperimentConfig, out: &Path) -> CliResult<ConvergenceOutput> {
    let started = Instant::now();
    config.validate()?;
    ensure_dir(out)?;
    let env = config.environment()?;
    let rewards = config.convergence_rewards();
    let checkpoints = config.checkpoints();
    let oracle = config.analysis.convergence.oracle_samples;
    let jobs: Vec<(usize, u64)> = (0..rewards.len())
        .flat_map(|i| config.run.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let runs: Vec<(crflab_core::analysis::ConvergenceRun, f64)> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let t = Instant::now();
            let (label, reward) = &rewards[i];
            let r = convergence_run(
                &env,
                label,
                reward,
                &config.optimizer,
                &config.run.spec(seed),
                &checkpoints,
                oracle,
            )?;
            Ok((r, ms_since(t)))
        })
        .collect::<CliResult<_>>()?;
    let timings = runs
        .iter()
        .map(|(r, ms)| SeedTiming { seed: r.seed, label: Some(r.label.clone()), ms: *ms })
        .collect();
    let runs: Vec<_> = runs.into_iter().map(|(r, _)| r).collect();
    let reports = assemble_convergence(&runs)?;
    let labels: Vec<String> = rewards.iter().map(|(l, _)| l.clone()).collect();
    let per_label = summarize_labels(&reports, &labels);
    let shaped = rewards.iter().find(|(_, r)| r.kind != RewardKind::Outcome);
    let outcome = rewards.iter().find(|(_, r)| r.kind == RewardKind::Outcome);
    let comparison = match (shaped, outcome) {
        (Some((a, _)), Some((b, _))) => Some(PairedComparison {
            label_a: a.clone(),
            label_b: b.clone(),
            test: compare_final(&reports, a, b),
        }),
        _ => None,
    };
    let output = ConvergenceOutput {
        artifact_version: ARTIFACT_VERSION.to_string(),
        config_hash: config.hash(),
        checkpoints,
        oracle_samples: oracle,
        rewards: labeled_configs(&rewards),
        runs: reports,
        per_label,
        comparison,
    };
    write_json(&out.join("convergence_report.json"), &output)?;
    let summary = serde_json::json!({
        "per_label": output.per_label,
        "comparison": output.comparison,
    });
    finish(
        out,
        "converge",
        config,
        vec!["convergence_report.json".into()],
        summary,
        started,
        timings,
    )?;
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub seed: u64,
    pub verdict: CollapseVerdict,
    pub final_accuracy: f64,
    pub final_length_tokens: f64,
    pub final_shaped_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub label: String,
    pub reward: RewardConfig,
    pub runs: Vec<ScenarioRun>,
    pub flag_rates: FlagRates,
    pub mean_final_accuracy: f64,
    pub mean_final_length_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseOutput {
    pub artifact_version: String,
    pub config_hash: String,
    pub thresholds: CollapseThresholds,
    pub scenarios: Vec<ScenarioReport>,
}

impl CollapseOutput {
    pub fn scenario(&self, label: &str) -> Option<&ScenarioReport> {
        self.scenarios.iter().find(|s| s.label == label)
    }
}

pub fn cmd_collapse_scan(config: &ExperimentConfig, out: &Path) -> CliResult<CollapseOutput> {
    let started = Instant::now();
    config.validate()?;
    let scenarios = config.scenarios();
    if scenarios.is_empty() {
        return Err(CliError::Core(crflab_core::Error::invalid_config(
            "analysis.collapse.scenarios is empty: nothing to scan",
        )));
    }
    ensure_dir(out)?;
    let env = config.environment()?;
    let thresholds = config.analysis.collapse.thresholds();
    let jobs: Vec<(usize, u64)> = (0..scenarios.len())
        .flat_map(|i| config.run.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let runs: Vec<SeedRun> = jobs
        .par_iter()
        .map(|&(i, seed)| train_seed(&env, config, &scenarios[i].1, seed, &thresholds, true))
        .collect::<CliResult<_>>()?;

    let n = config.run.seeds.len();
    let reports: Vec<ScenarioReport> = scenarios
        .iter()
        .zip(runs.chunks(n))
        .map(|((label, reward), chunk)| {
            let runs: Vec<ScenarioRun> = chunk
                .iter()
                .map(|r| {
                    let last = r.history.last().expect("at least one step");
                    ScenarioRun {
                        seed: r.seed,
                        verdict: r.collapse.expect("verdict requested"),
                        final_accuracy: last.accuracy_fraction,
                        final_length_tokens: last.mean_length_tokens,
                        final_shaped_reward: last.mean_shaped_reward,
                    }
                })
                .collect();
            ScenarioReport {
                label: label.clone(),
                reward: *reward,
                flag_rates: FlagRates::from_verdicts(runs.iter().map(|r| &r.verdict))
                    .expect("at least one seed"),
                mean_final_accuracy: mean(&runs.iter().map(|r| r.final_accuracy).collect::<Vec<_>>()),
                mean_final_length_tokens: mean(
                    &runs.iter().map(|r| r.final_length_tokens).collect::<Vec<_>>(),
                ),
                runs,
            }
        })
        .collect();
    let output = CollapseOutput {
        artifact_version: ARTIFACT_VERSION.to_string(),
        config_hash: config.hash(),
        thresholds,
        scenarios: reports,
    };
    write_json(&out.join("collapse_report.json"), &output)?;
    let summary = serde_json::json!(output
        .scenarios
        .iter()
        .map(|s| serde_json::json!({
            "label": s.label,
            "flag_rates": s.flag_rates,
            "mean_final_accuracy": s.mean_final_accuracy,
        }))
        .collect::<Vec<_>>());
    let timings = runs
        .iter()
        .zip(&jobs)
        .map(|(r, &(i, _))| SeedTiming { seed: r.seed, label: Some(scenarios[i].0.clone()), ms: r.ms })
        .collect();
    finish(
        out,
        "collapse-scan",
        config,
        vec!["collapse_report.json".into()],
        summary,
        started,
        timings,
    )?;
    Ok(output)
}
