//! `trajaudit`: one entry point for synthesis, evaluation, monitoring and review.
//!
//! Exit codes: 0 on success, 1 on domain errors, 2 on usage errors. Every run writes
//! `<out>/<command>.summary.json` embedding the resolved configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{CliConfig, GeneratorKind, Overrides, RejectionMode, VerifierKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{message}")]
    Domain { code: &'static str, message: String },
}

impl CliError {
    pub fn domain(code: &'static str, e: impl std::fmt::Display) -> Self {
        CliError::Domain {
            code,
            message: e.to_string(),
        }
    }

    fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::Domain { code, .. } => code,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain { .. } => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "trajaudit", version, about = "Trajectory anomaly synthesis, auditing and monitoring")]
struct Cli {
    /// TOML configuration file. Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Similarity threshold for joint exact match.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Audit every k steps.
    #[arg(long, global = true)]
    interval: Option<usize>,
    #[arg(long, global = true)]
    retry_budget: Option<usize>,
    #[arg(long, global = true)]
    test_fraction: Option<f64>,
    #[arg(long, global = true, value_enum)]
    generator: Option<GeneratorKind>,
    #[arg(long, global = true, value_enum)]
    verifier: Option<VerifierKind>,
    /// What a scripted agent does after a rollback.
    #[arg(long, global = true, value_enum)]
    on_rejection: Option<RejectionMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
#[group(required = true, multiple = false)]
pub struct SeedSource {
    /// Seed trajectories, one JSON record per line.
    #[arg(long)]
    input: Option<PathBuf>,
    /// The golden runs of the bundled scriptenv tasks.
    #[arg(long)]
    scriptenv_goldens: bool,
    /// A synthetic corpus of this many seeds over the 13 benchmark tasks.
    #[arg(long)]
    synthetic: Option<usize>,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct ScenarioArgs {
    /// `faucet-loop`, or a suite scenario such as `heat-mug/I.b@4`.
    #[arg(long, default_value = "faucet-loop", conflicts_with = "all")]
    scenario: String,
    /// Every scenario of the suite, plus faucet-loop.
    #[arg(long)]
    all: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter seed trajectories with the rule validator.
    ValidateSeeds(SeedSource),
    /// Perturb-and-complete synthesis, then balanced assembly.
    Synthesize(SeedSource),
    /// Pair golden seeds with synthesized anomalies into a balanced dataset.
    Assemble {
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        anomalies: PathBuf,
    },
    /// Per-task train/test split without pair leakage.
    Split {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score predictions, or the configured verifier, against a labeled dataset.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Predictions file; when absent the configured verifier produces them.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Row label for the rendered table.
        #[arg(long)]
        label: Option<String>,
    },
    /// Run scripted agents under the check-and-act monitor.
    MonitorRun(ScenarioArgs),
    /// Monitored run against the restart-from-scratch baseline.
    CompareRestart(ScenarioArgs),
    /// Serve the human review API.
    ReviewServe {
        #[arg(long)]
        dataset: PathBuf,
        /// Listen address; overrides review.addr.
        #[arg(long)]
        addr: Option<String>,
        /// Verdict log; overrides review.log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Render a metrics summary as tables.
    Report {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        label: Option<String>,
    },
}

fn resolve(cli: &Cli) -> Result<CliConfig, CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        tau: cli.tau,
        interval: cli.interval,
        retry_budget: cli.retry_budget,
        test_fraction: cli.test_fraction,
        generator: cli.generator,
        verifier: cli.verifier,
        on_rejection: cli.on_rejection,
    };
    let config = CliConfig::load(cli.config.as_deref())?.apply(&overrides);
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = resolve(&cli)?;
    std::fs::create_dir_all(&config.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", config.out.display())))?;
    match cli.command {
        Command::ValidateSeeds(source) => commands::validate_seeds(&config, &source),
        Command::Synthesize(source) => commands::synthesize(&config, &source),
        Command::Assemble { seeds, anomalies } => commands::assemble(&config, &seeds, &anomalies),
        Command::Split { dataset } => commands::split(&config, &dataset),
        Command::Evaluate {
            dataset,
            predictions,
            label,
        } => commands::evaluate(&config, &dataset, predictions.as_deref(), label),
        Command::MonitorRun(args) => commands::monitor_run(&config, &args),
        Command::CompareRestart(args) => commands::compare_restart(&config, &args),
        Command::ReviewServe { dataset, addr, log } => commands::review_serve(&config, &dataset, addr, log),
        Command::Report { summary, label } => commands::report(&config, &summary, label),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({"code": e.code(), "message": e.to_string()});
            eprintln!("{body}");
            ExitCode::from(e.exit_code())
        }
    }
}
