//! `dpfl`: run experiments, compute selection plans, replay estimation.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 failure while
//! executing a valid request.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "dpfl",
    version,
    about = "Differentially private federated learning simulator"
)]
struct Cli {
    /// Master seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train with the configured algorithm(s) and write history, summary and
    /// a resolved-config snapshot.
    Run {
        /// Flat key = value config file; defaults are used when omitted.
        config: Option<PathBuf>,
    },
    /// Compute a selection plan for a client roster.
    Plan(PlanArgs),
    /// Replay stage-one estimation from a recorded history.
    Estimate {
        history: PathBuf,
        /// Where to write the estimates (default: <out>/estimated_params.json).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Partition the configured dataset and report per-client sample counts.
    Partition { config: Option<PathBuf> },
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// CSV with header `client_id,epsilon,delta,num_samples`.
    #[arg(long)]
    roster: PathBuf,
    #[arg(long, default_value = "gaussian")]
    mechanism: String,
    /// Clients per round.
    #[arg(long)]
    k: u64,
    /// Rounds in the planning horizon.
    #[arg(long)]
    rounds: u64,
    /// Number of model parameters.
    #[arg(long)]
    model_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    clip_bound: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    /// CSV with header `client_id,gamma`; switches to the full allocation problem.
    #[arg(long)]
    gamma: Option<PathBuf>,
    /// Smoothness constant (with --gamma).
    #[arg(long, default_value_t = 1.0)]
    l_smooth: f64,
    /// Strong-convexity constant (with --gamma).
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    /// Learning-rate offset of the decaying schedule (with --gamma).
    #[arg(long, default_value_t = 8.0)]
    lr_gamma: f64,
    /// Plan file (default: <out>/plan.csv).
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let globals = commands::Globals {
        seed: cli.seed,
        out: cli.out,
        overrides: cli.overrides,
    };
    let result = match cli.command {
        Command::Run { config } => commands::run(&globals, config.as_deref()),
        Command::Plan(args) => commands::plan(&globals, &args),
        Command::Estimate { history, output } => {
            commands::estimate(&globals, &history, output.as_deref())
        }
        Command::Partition { config } => commands::partition(&globals, config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}
