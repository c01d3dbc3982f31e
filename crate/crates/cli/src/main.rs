//! `regmix`: ingest survey histograms, backtest combination methods, run
//! the Monte Carlo experiment and draw PIT histograms.
//!
//! Exit status is 0 on success, 1 when a computation fails and 2 for bad
//! input files or command-line usage.

mod commands;
mod manifest;

use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "regmix", version, about = "Regularized mixtures of density forecasts")]
struct Cli {
    /// Worker threads for estimation and simulation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Harmonize raw survey histograms into a complete panel.
    Ingest(commands::IngestArgs),
    /// Rolling out-of-sample evaluation of one combination method.
    Backtest(commands::BacktestArgs),
    /// Simulated comparison of combination methods.
    Montecarlo(commands::MontecarloArgs),
    /// PIT histograms of a method's backtest, split into two subsamples.
    Pit(commands::PitArgs),
}

fn run(cli: &Cli) -> Result<()> {
    let workers = match cli.workers {
        Some(0) => return Err(commands::Usage("--workers must be at least 1".into()).into()),
        w => w,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    pool.install(|| match &cli.command {
        Command::Ingest(args) => commands::ingest(args),
        Command::Backtest(args) => commands::backtest(args),
        Command::Montecarlo(args) => commands::montecarlo(args, workers),
        Command::Pit(args) => commands::pit(args),
    })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<commands::Usage>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<regmix::Error>() {
            return if e.is_input_error() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
