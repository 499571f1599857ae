//! `safenav` command-line front end.

mod check;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{ModelKind, Overrides};

/// Exit 1: the run was rejected before any work. Exit 2: it failed midway.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn validation(e: safenav::Error) -> Self {
        Self::Validation(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Validation(m) => write!(f, "invalid input: {m}"),
            Self::Runtime(m) => write!(f, "run failed: {m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Parser)]
#[command(
    name = "safenav",
    version,
    about = "Multi-robot navigation with CBF action refinement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Scenario preset or scenario file; repeat or comma-separate for several.
    #[arg(long, global = true, value_name = "NAME", value_delimiter = ',')]
    scenario: Vec<String>,
    #[arg(long, global = true, value_name = "N")]
    episodes: Option<usize>,
    /// Base seed of episodes; for `train` also the training seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    refine: Option<Switch>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelKind>,
    /// Output directory; nothing is written outside it.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// `nominal`, `random`, or a policy JSON written by `train`.
    #[arg(long, global = true, value_name = "PATH")]
    policy: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run episodes and write trajectories, plots and metrics.
    Simulate,
    /// Train a policy with warmup and cross-entropy search.
    Train,
    /// Run the scenario suite and write per-scenario metrics.
    Evaluate,
    /// Re-render SVG plots from the trajectory logs in --out.
    Plot,
    /// Run the invariant self-test battery.
    Check,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            scenarios: self.scenario.clone(),
            episodes: self.episodes,
            seed: self.seed,
            refine: self.refine.map(|s| s == Switch::On),
            model: self.model,
            out: self.out.clone(),
            policy: self.policy.clone(),
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("SAFENAV_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Validation(format!("SAFENAV_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(CliError::runtime)
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let overrides = cli.common.overrides();
    let cfg = config::RunConfig::load(cli.common.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Plot => commands::plot(&cfg),
        Command::Check => check::run(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("safenav: {e}");
            ExitCode::from(match e {
                CliError::Validation(_) => 1,
                CliError::Runtime(_) => 2,
            })
        }
    }
}
