use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod output;
mod validate;

use config::{Overrides, RunConfig};
use error::CliError;
use validate::Suite;

/// Complexity, thresholds and ground states of the spiked spherical tensor model.
#[derive(Debug, Parser)]
#[command(name = "spiked", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Complexity S(m, x*(lambda)) on a latitude grid, per lambda.
    Surface,
    /// lambda1, lambda2 and lambda_tr for (p, k).
    Thresholds,
    /// Kac-Rice count of deep critical points in a window.
    Count,
    /// Ground state energy prediction, optionally against simulation.
    Gse {
        #[arg(long)]
        simulate: bool,
    },
    /// Run validation suites; exit 1 on any failure.
    Validate {
        /// Suites to run (default: all).
        #[arg(long, value_enum)]
        suite: Vec<Suite>,
    },
    /// The constant C(lambda) over a lambda sweep.
    SweepC,
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let cfg = RunConfig::resolve(&cli.overrides)?;
    if let Some(w) = cfg.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Usage(format!("worker pool: {e}")))?;
    }
    let (report, ok) = match cli.command {
        Command::Surface => (commands::surface(&cfg)?, true),
        Command::Thresholds => (commands::thresholds_cmd(&cfg)?, true),
        Command::Count => (commands::count_cmd(&cfg)?, true),
        Command::Gse { simulate } => (commands::gse(&cfg, simulate)?, true),
        Command::Validate { suite } => {
            let suites = if suite.is_empty() { Suite::ALL.to_vec() } else { suite };
            validate::run(&cfg, &suites)?
        }
        Command::SweepC => (commands::sweep_c(&cfg)?, true),
    };
    report.write(&cfg)?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
