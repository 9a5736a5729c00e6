mod commands;
mod error;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BarycenterArgs, BenchArgs, CanonicalizeArgs, ClustersArgs, DensityArgs, DistanceArgs, FitArgs, QuantizeArgs};
use error::{CliError, CliResult};

/// Optimal-transport distances, quantization and barycenters for Gaussian mixtures.
#[derive(Debug, Parser)]
#[command(name = "gmmot", version)]
struct Cli {
    /// Worker threads (defaults to the machine's parallelism). Results do
    /// not depend on this value.
    #[arg(long, global = true, env = "GMMOT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Distance between two mixture files.
    Distance(DistanceArgs),
    /// Fit a mixture to a point CSV with EM.
    Fit(FitArgs),
    /// Approximate a mixture with fewer components.
    Quantize(QuantizeArgs),
    /// Barycenter of several mixtures.
    Barycenter(BarycenterArgs),
    /// Estimate the number of clusters in a point CSV.
    Clusters(ClustersArgs),
    /// Time the distance computations on random mixtures.
    Bench(BenchArgs),
    /// Render a 2d mixture density as PGM or CSV.
    Density(DensityArgs),
    /// Validate a mixture file and rewrite it in canonical form.
    Canonicalize(CanonicalizeArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(format!("cannot start {n} threads: {e}")))?;
    }
    match &cli.command {
        Command::Distance(a) => commands::distance(a),
        Command::Fit(a) => commands::fit(a),
        Command::Quantize(a) => commands::quantize_cmd(a),
        Command::Barycenter(a) => commands::barycenter(a),
        Command::Clusters(a) => commands::clusters(a),
        Command::Bench(a) => commands::bench_cmd(a),
        Command::Density(a) => commands::density(a),
        Command::Canonicalize(a) => commands::canonicalize(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
