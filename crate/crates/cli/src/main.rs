//! Command-line entry point wiring experiment execution, model fitting,
//! behavioral analysis, and the activation probe into reproducible
//! commands. Every command that writes an output also writes a
//! `<output>.manifest.json` recording flags, seeds, and input hashes so
//! published numbers are re-derivable.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "relval",
    about = "Bandit experiments for LLM and synthetic agents, cognitive model fitting, and relative-value bias analysis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of independent experiment runs and log every trial.
    Run(RunArgs),
    /// Fit cognitive model variants to a trial log by maximum likelihood.
    Fit(FitArgs),
    /// Rank fitted variants by BIC.
    Compare(CompareArgs),
    /// Compute behavioral metrics from a trial log.
    Analyze(AnalyzeArgs),
    /// Regress hidden-unit activations on value-difference predictors.
    Probe(ProbeArgs),
    /// List or validate task definitions.
    Tasks(TasksArgs),
}

#[derive(Args, serde::Serialize)]
struct RunArgs {
    /// Task name from the catalog (e.g. HW2023a).
    #[arg(long)]
    task: String,
    /// Prompt style: standard or comparisons.
    #[arg(long, default_value = "standard")]
    style: String,
    /// Prompt mode: chat or completion.
    #[arg(long, default_value = "chat")]
    mode: String,
    /// Agent: ideal | uniform | sim:<variant> | llm:<profile>.
    #[arg(long)]
    agent: String,
    /// Synthetic agent parameters, e.g.
    /// "omega=0.6,alpha_con=0.5,alpha_dis=0.17,beta_train=10,beta_transfer=10,bias=1.2".
    #[arg(long)]
    sim_params: Option<String>,
    /// Independent runs in the batch.
    #[arg(long, default_value_t = 30)]
    runs: u32,
    /// Master seed; per-run seeds derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSONL log path.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing log.
    #[arg(long)]
    force: bool,
    /// Continue an interrupted batch.
    #[arg(long)]
    resume: bool,
    /// Store full prompt text and raw replies in the log.
    #[arg(long)]
    log_text: bool,
    /// Task catalog file (defaults to the built-in catalog).
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Tool config file (endpoint profiles).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker thread cap for parallel sections.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, serde::Serialize)]
struct FitArgs {
    /// Trial log produced by `run`.
    #[arg(long)]
    log: PathBuf,
    /// Fit one variant (ABS, ABS-2a, ABS-2b, ABS-full, REL, ...).
    #[arg(long, conflicts_with = "all")]
    variant: Option<String>,
    /// Fit all eight variants.
    #[arg(long)]
    all: bool,
    /// Optimizer starts per variant.
    #[arg(long, default_value_t = 20)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output fit-results file (JSON).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, serde::Serialize)]
struct CompareArgs {
    /// Fit-results file produced by `fit --all`.
    #[arg(long)]
    fits: PathBuf,
    /// Optional CSV output of the ranking.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, serde::Serialize)]
struct AnalyzeArgs {
    /// Trial logs (one row/group per log).
    #[arg(long, required = true)]
    log: Vec<PathBuf>,
    /// Metric: accuracy | bias | predictive.
    #[arg(long)]
    metric: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Fit-results file (for --metric predictive).
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Variant to simulate from (defaults to the BIC winner).
    #[arg(long)]
    variant: Option<String>,
    /// Simulated runs for predictive checks.
    #[arg(long, default_value_t = 200)]
    sims: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, serde::Serialize)]
struct ProbeArgs {
    /// Activation matrix file.
    #[arg(long)]
    acts: PathBuf,
    /// Trial metadata sidecar (JSONL of option pairs).
    #[arg(long)]
    trials: PathBuf,
    /// Task the trials came from.
    #[arg(long)]
    task: String,
    /// Output CSV of per-unit regressions.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, serde::Serialize)]
struct TasksArgs {
    /// list | validate
    #[arg(value_name = "ACTION", default_value = "list")]
    action: String,
    #[arg(long)]
    tasks: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => commands::run(args),
        Command::Fit(args) => commands::fit(args),
        Command::Compare(args) => commands::compare(args),
        Command::Analyze(args) => commands::analyze(args),
        Command::Probe(args) => commands::probe(args),
        Command::Tasks(args) => commands::tasks(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
