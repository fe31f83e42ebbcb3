//! Command-line harness for crflab: config loading, experiment drivers and
//! reproducible CSV/JSON outputs.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_collapse_scan, cmd_converge, cmd_train, cmd_variance, read_curves, resolve_output_dir,
    CollapseOutput, ConvergenceOutput, CurveRow, RunManifest, TrainSummary, VarianceOutput,
    ARTIFACT_VERSION, CURVE_COLUMNS, OUT_DIR_ENV,
};
pub use config::{load_config, ExperimentConfig, LabeledReward};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "crflab", version, about = "Reward-shaping experiments on a synthetic reasoning task")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every seed and write per-seed curves plus a summary.
    Train(CommonArgs),
    /// Gradient-variance sweep over correlation settings.
    Variance(CommonArgs),
    /// Running mean of the squared gradient norm against the decay bound.
    Converge(CommonArgs),
    /// Collapse detection over a matrix of reward scenarios.
    CollapseScan(CommonArgs),
    /// Load and validate a config, then print it with defaults filled in.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Replace the configured seeds (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub seed_override: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl CommonArgs {
    pub fn load(&self) -> CliResult<ExperimentConfig> {
        let mut config = load_config(&self.config)?;
        if let Some(seeds) = &self.seed_override {
            config.run.seeds = seeds.clone();
            config.validate()?;
        }
        Ok(config)
    }
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    match workers {
        None => f(),
        Some(0) => Err(CliError::Usage("--workers must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))?
            .install(f),
    }
}

/// Runs a parsed command line. Returns what should go to stdout.
pub fn run(cli: Cli) -> CliResult<String> {
    let (args, cmd) = match cli.command {
        Command::ValidateConfig { config } => {
            let c = load_config(&config)?;
            let out = serde_json::json!({ "config_hash": c.hash(), "config": c });
            return Ok(serde_json::to_string_pretty(&out).unwrap());
        }
        Command::Train(a) => (a, "train"),
        Command::Variance(a) => (a, "variance"),
        Command::Converge(a) => (a, "converge"),
        Command::CollapseScan(a) => (a, "collapse-scan"),
    };
    let config = args.load()?;
    let out = resolve_output_dir(args.out.as_deref(), &config);
    with_pool(args.workers, || {
        match cmd {
            "train" => cmd_train(&config, &out).map(|_| ()),
            "variance" => cmd_variance(&config, &out).map(|_| ()),
            "converge" => cmd_converge(&config, &out).map(|_| ()),
            _ => cmd_collapse_scan(&config, &out).map(|_| ()),
        }
    })?;
    Ok(format!("{cmd}: wrote {}", out.display()))
}
