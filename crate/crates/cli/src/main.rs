mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use s4sense::Error;

use config::RunConfig;

/// Structured state-space models for mobile-sensor field reconstruction.
#[derive(Parser, Debug)]
#[command(name = "s4sense", version)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a double-gyre sensor dataset.
    GenData,
    /// Print the header of a dataset file.
    Describe {
        /// Dataset file; defaults to the configured `data` key.
        path: Option<PathBuf>,
    },
    /// Compare naive, Vandermonde and generating-function kernels.
    KernelCheck,
    /// Train a model and write a checkpoint, loss trace and metrics.
    Train,
    /// Evaluate a checkpoint on clean, disturbed and noisy inputs.
    Eval,
    /// Transfer functions, eigenvalues and mean H2 norms of a checkpoint.
    Bode,
    /// Per-SSM and per-layer H2 norms of a checkpoint.
    H2Report,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        _ => 1,
    }
}

fn run(cli: &Cli) -> s4sense::Result<bool> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    match &cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Describe { path } => commands::describe(&path.clone().unwrap_or_else(|| cfg.path("data"))),
        Command::KernelCheck => commands::kernel_check(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Eval => commands::eval_cmd(&cfg),
        Command::Bode => commands::bode_cmd(&cfg),
        Command::H2Report => commands::h2_report(&cfg),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().after_long_help(config::keys_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if let Some(n) = std::env::var("S4_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
