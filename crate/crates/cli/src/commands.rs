use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use sequest::design::ObservedStudy;
use sequest::estimators::{
    diff_in_diffs, diff_in_means, naive_moderator, ols_interaction, write_estimates_csv,
    OlsOptions, Sandwich,
};
use sequest::harness::{
    attenuation_table, policy_summary, power_table, run_grid, pate_summary, write_attenuation_csv,
    write_metrics_csv, write_power_csv, write_pate_summary_csv,
};
use sequest::policy::{
    fit_per_arm, impute_population, optimal_budgeted, optimal_unconstrained, read_covariates_csv,
    BudgetSolver, CostModel,
};
use sequest::Error;

use crate::config::{self, ConfigError, GridPreset, RunConfig, DEFAULT_SEED};
use crate::{EstimatorName, SandwichArg, SolverArg};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] Error),
    #[error("estimator failed: {0}")]
    Estimator(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Read { .. } => 1,
            CliError::Estimator(_) => 4,
            CliError::Core(e) => match e {
                Error::Parameter { .. } | Error::Schema(_) | Error::Csv(_) | Error::Json(_) => 2,
                Error::ScenarioAbort { .. } => 3,
                Error::Infeasible { .. } => 5,
                Error::Io(_) => 1,
                Error::Dimension(_) | Error::Design(_) | Error::Enrollment { .. } | Error::SizeLimit { .. } => 2,
                Error::Singular { .. } | Error::InsufficientData(_) | Error::ArmFit { .. } => 4,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(Error::from)?))
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    seed: u64,
    config_hash: &'a str,
    config: &'a RunConfig,
    outputs: &'a [&'a str],
}

const OUTPUTS: [&str; 7] = [
    "metrics.csv",
    "policy_summary.json",
    "pate_summary.csv",
    "power.csv",
    "attenuation.csv",
    "config.toml",
    "manifest.json",
];

pub fn simulate(
    config_path: Option<&Path>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    preset: Option<GridPreset>,
) -> Result<()> {
    let cfg = match config_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| CliError::Read {
                path: p.to_path_buf(),
                source,
            })?;
            RunConfig::parse(&text, &p.display().to_string())?
        }
        None => RunConfig::default(),
    };
    let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let out = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    let preset = preset.or(cfg.grid).unwrap_or_default();
    let grid = cfg.resolve(preset, seed)?;
    grid.validate()?;

    let hash = config::grid_hash(&grid);
    let dir = out.join(format!("run-{seed}-{}", &hash[..12]));
    fs::create_dir_all(&dir).map_err(Error::from)?;

    let result = run_grid(&grid)?;

    write_metrics_csv(create(&dir.join("metrics.csv"))?, &result.metrics)?;
    let mut w = create(&dir.join("policy_summary.json"))?;
    serde_json::to_writer_pretty(&mut w, &policy_summary(&result)).map_err(Error::from)?;
    w.flush().map_err(Error::from)?;
    write_pate_summary_csv(create(&dir.join("pate_summary.csv"))?, &pate_summary(&result.metrics))?;
    write_power_csv(create(&dir.join("power.csv"))?, &power_table(&result, grid.base_params.mu_b))?;
    write_attenuation_csv(create(&dir.join("attenuation.csv"))?, &attenuation_table(&result))?;

    let echo = config::echo(&grid, out.clone());
    let text = toml::to_string(&echo).expect("config serializes");
    fs::write(dir.join("config.toml"), text).map_err(Error::from)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config_hash: &hash,
        config: &echo,
        outputs: &OUTPUTS,
    };
    let mut w = create(&dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(Error::from)?;
    w.flush().map_err(Error::from)?;

    println!("{}", dir.display());
    Ok(())
}

fn read_study(path: &Path) -> Result<ObservedStudy> {
    Ok(ObservedStudy::read_csv(open(path)?)?)
}

/// Estimator errors map to exit code 4 except for bad arguments.
fn estimator_err(e: Error) -> CliError {
    match e {
        Error::Parameter { .. } => CliError::Core(e),
        other => CliError::Estimator(other),
    }
}

pub fn estimate(path: &Path, which: EstimatorName, alpha: f64, sandwich: SandwichArg) -> Result<()> {
    let study = read_study(path)?;
    let sandwich = match sandwich {
        SandwichArg::Hc0 => Sandwich::Hc0,
        SandwichArg::Hc2 => Sandwich::Hc2,
    };
    let rows = match which {
        EstimatorName::Dim => vec![("dim".to_string(), diff_in_means(&study, alpha).map_err(estimator_err)?)],
        EstimatorName::Did => vec![("did".to_string(), diff_in_diffs(&study, alpha).map_err(estimator_err)?)],
        EstimatorName::Ols => {
            let fit = ols_interaction(
                &study,
                alpha,
                OlsOptions {
                    sandwich,
                    standardize: false,
                },
            )
            .map_err(estimator_err)?;
            let mut rows = vec![("ols".to_string(), fit.tau)];
            let names = &fit.fit.column_names;
            let first = names.len() - fit.moderators.len();
            rows.extend(
                fit.moderators
                    .iter()
                    .zip(&names[first..])
                    .map(|(m, name)| (format!("ols:{name}"), *m)),
            );
            rows
        }
        EstimatorName::NaiveMod => vec![(
            "naive_mod".to_string(),
            naive_moderator(&study, alpha, sandwich).map_err(estimator_err)?,
        )],
    };
    let stdout = io::stdout();
    write_estimates_csv(stdout.lock(), &rows)?;
    Ok(())
}

pub fn policy(
    study_path: &Path,
    covariates_path: &Path,
    costs_path: Option<&Path>,
    budget: Option<f64>,
    solver: SolverArg,
    out: &Path,
) -> Result<()> {
    let study = read_study(study_path)?;
    let target = read_covariates_csv(open(covariates_path)?)?;
    let costs = match costs_path {
        Some(p) => Some(CostModel::read_csv(open(p)?, budget.unwrap_or(f64::INFINITY))?),
        None => None,
    };
    let coeffs = fit_per_arm(&study).map_err(estimator_err)?;
    let imputed = impute_population(&coeffs, &target)?;
    let solver = match solver {
        SolverArg::Exact => BudgetSolver::default(),
        SolverArg::Lp => BudgetSolver::LpRounding,
        SolverArg::Dp => BudgetSolver::IntegerDp,
    };
    let regime = match &costs {
        Some(c) => optimal_budgeted(&imputed, c, solver)?,
        None => optimal_unconstrained(&imputed)?,
    };
    fs::create_dir_all(out).map_err(Error::from)?;
    regime.write_csv(create(&out.join("regime.csv"))?)?;
    let mut w = create(&out.join("policy_summary.json"))?;
    regime.write_summary(&mut w)?;
    w.flush().map_err(Error::from)?;
    Ok(())
}
