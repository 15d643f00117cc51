mod config;
mod experiment;
mod gram;
mod preprocess;
mod verify;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

/// Tree-walk kernels between attributed point-cloud graphs.
#[derive(Parser)]
#[command(name = "pcgk", version)]
struct Cli {
    /// Worker threads for all parallel work (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn IDX or PGM images into graph files plus a manifest.
    Preprocess(preprocess::Args),
    /// Compute the Gram matrix of a directory of graphs.
    Gram(gram::Args),
    /// Run nested cross-validation as described by a config file.
    Experiment(experiment::Args),
    /// Run the oracle-equivalence and positivity suites.
    Verify(verify::Args),
}

fn run(cli: Cli) -> Result<bool> {
    let workers = match cli.workers {
        Some(0) => anyhow::bail!("--workers must be at least 1"),
        Some(w) => w,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")?;
    pool.install(|| match cli.command {
        Command::Preprocess(args) => preprocess::run(&args).map(|()| true),
        Command::Gram(args) => gram::run(&args).map(|()| true),
        Command::Experiment(args) => experiment::run(&args).map(|()| true),
        Command::Verify(args) => verify::run(&args),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
