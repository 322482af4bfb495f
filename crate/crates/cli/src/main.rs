//! `sequest`: batch front end for the simulation harness, the effect
//! estimators and the treatment-policy solvers.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 malformed input or invalid
//! parameters, 3 scenario aborted, 4 estimator failure, 5 infeasible budget.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::GridPreset;

#[derive(Parser)]
#[command(name = "sequest", version, about = "Soil-carbon trial estimators, policies and simulations")]
struct Cli {
    /// Cap on worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario grid and write metric tables under the output directory.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output root; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Grid preset; overrides the config.
        #[arg(long, value_enum)]
        grid: Option<GridPreset>,
    },
    /// Estimate a treatment effect from a study CSV and print it as CSV.
    Estimate {
        #[arg(long)]
        study: PathBuf,
        #[arg(long, value_enum)]
        estimator: EstimatorName,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = SandwichArg::Hc0)]
        sandwich: SandwichArg,
    },
    /// Fit per-arm models on a study and choose a regime for a target population.
    Policy {
        #[arg(long)]
        study: PathBuf,
        /// Target population, `plot_id,baseline`.
        #[arg(long)]
        covariates: PathBuf,
        /// Plot costs, `plot_id,c0,c1,...`.
        #[arg(long)]
        costs: Option<PathBuf>,
        #[arg(long, requires = "costs")]
        budget: Option<f64>,
        #[arg(long, value_enum, default_value_t = SolverArg::Exact)]
        solver: SolverArg,
        /// Directory for `regime.csv` and `policy_summary.json`.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum EstimatorName {
    Dim,
    Did,
    Ols,
    NaiveMod,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SandwichArg {
    Hc0,
    Hc2,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SolverArg {
    Exact,
    Lp,
    Dp,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Simulate {
            config,
            seed,
            out,
            grid,
        } => commands::simulate(config.as_deref(), seed, out, grid),
        Command::Estimate {
            study,
            estimator,
            alpha,
            sandwich,
        } => commands::estimate(&study, estimator, alpha, sandwich),
        Command::Policy {
            study,
            covariates,
            costs,
            budget,
            solver,
            out,
        } => commands::policy(&study, &covariates, costs.as_deref(), budget, solver, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
