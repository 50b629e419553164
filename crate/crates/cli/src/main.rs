use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tpbs::dirichlet::DEFAULT_TOL_DEN;
use tpbs::Scale;

mod commands;
mod config;
mod error;

use error::CliError;

#[derive(Parser)]
#[command(name = "tpbs", version, about = "Tensor-product B-spline models with Dirichlet-energy regularization")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per manifest split and save both checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the root seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; each split gets a `split<i>` subdirectory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Only this split index.
        #[arg(long)]
        split: Option<usize>,
    },
    /// Score saved checkpoints with every estimator and missing-entry count.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory written by `train`.
        #[arg(long, default_value = "runs")]
        run: PathBuf,
        /// Metrics CSV, one row per split, checkpoint, estimator and scenario.
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
        #[arg(long)]
        split: Option<usize>,
    },
    /// Report the global and local Dirichlet energies of a saved model.
    De {
        #[arg(long)]
        model: PathBuf,
        /// CSV of box centers in the model's input units (header row).
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_TOL_DEN)]
        tol_den: f64,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the histogram mixture density on one split's training inputs.
    FitDensity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        split: usize,
        #[arg(long, default_value = "density.tpdf")]
        out: PathBuf,
    },
    /// Compare the fast routines against the reference oracles.
    Selfcheck {
        #[arg(long, default_value = "small")]
        scale: Scale,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Train { config, seed, out, split } => commands::train(&config, seed, &out, split),
        Command::Eval {
            config,
            seed,
            run,
            out,
            split,
        } => commands::eval(&config, seed, &run, &out, split),
        Command::De {
            model,
            points,
            rho,
            tol_den,
            out,
        } => commands::de(&model, points.as_deref(), rho, tol_den, out.as_deref()),
        Command::FitDensity { config, seed, split, out } => commands::fit_density(&config, seed, split, &out),
        Command::Selfcheck { scale, seed, out } => commands::selfcheck(scale, seed, out.as_ref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
