use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::ScenarioGrid;
use crate::design::{enroll_and_assign_with, DesignSpec, SamplesPerPlot};
use crate::error::{Error, Result};
use crate::estimators::{
    diff_in_diffs, diff_in_means, naive_moderator, ols_interaction, EstimateWithCI, OlsOptions,
};
use crate::policy::{
    fit_per_arm, impute_population, optimal_budgeted, optimal_restricted, optimal_unconstrained,
    oracle_regime, BudgetSolver, CostModel,
};
use crate::population::{generate_population, pate, population_ols_coeffs, Population};
use crate::seed;
use crate::stats::{mean, sample_variance, KahanSum};

/// What an estimator is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Pate,
    /// Difference of the population slopes on baseline, per SD of baseline.
    Moderator,
}

/// Estimators scored by the harness, in output order.
pub const ESTIMATORS: [(&str, Target); 5] = [
    ("dim", Target::Pate),
    ("did", Target::Pate),
    ("ols", Target::Pate),
    ("ols_mod", Target::Moderator),
    ("naive_mod", Target::Moderator),
];

/// Population settings that share one generated population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub tau: f64,
    pub beta_mod: f64,
    pub sd_eps1: f64,
}

impl Setting {
    fn keys(&self) -> [u64; 3] {
        [self.tau.to_bits(), self.beta_mod.to_bits(), self.sd_eps1.to_bits()]
    }
}

/// One cell of the grid: a population setting and a study design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(flatten)]
    pub setting: Setting,
    pub n: usize,
    pub samples_per_plot: SamplesPerPlot,
}

impl Scenario {
    pub fn label(&self) -> String {
        format!(
            "tau={} beta_mod={} sd_eps1={} n={} m={}",
            self.setting.tau, self.setting.beta_mod, self.setting.sd_eps1, self.n, self.samples_per_plot
        )
    }

    fn keys(&self, replicate: usize) -> [u64; 6] {
        let [a, b, c] = self.setting.keys();
        [a, b, c, self.n as u64, self.samples_per_plot.key(), replicate as u64]
    }
}

/// Estimands computed once per generated population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationTruth {
    #[serde(flatten)]
    pub setting: Setting,
    pub pate: f64,
    pub moderator: f64,
    pub oracle_value: f64,
    pub control_mean: f64,
    pub treated_mean: f64,
}

/// Monte Carlo summary of one estimator in one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    #[serde(flatten)]
    pub scenario: Scenario,
    pub estimator: String,
    pub target: Target,
    pub truth: f64,
    pub bias: f64,
    pub rmse: f64,
    pub ci_width: f64,
    pub coverage: f64,
    /// Share of intervals lying entirely above zero. Not reported for
    /// moderator estimators.
    pub power: Option<f64>,
    /// Variance of the estimates across replicates (`1/R` denominator).
    pub est_var: f64,
    /// Monte Carlo standard error of the bias; NaN with one replicate.
    pub mc_se: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub warnings: String,
}

/// Realized population value of the learned regimes in one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    #[serde(flatten)]
    pub scenario: Scenario,
    pub oracle: f64,
    pub estimated: f64,
    pub restricted: f64,
    pub budgeted: Option<f64>,
    /// Mean of `estimated - restricted` across replicates.
    pub gap: f64,
    pub gap_se: f64,
    pub n_ok: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub truths: Vec<PopulationTruth>,
    pub metrics: Vec<MetricsRow>,
    pub policy: Vec<PolicyRow>,
}

struct Replicate {
    estimates: [EstimateWithCI; ESTIMATORS.len()],
    estimated: f64,
    restricted: f64,
    budgeted: Option<f64>,
}

struct Context<'a> {
    grid: &'a ScenarioGrid,
    pop: &'a Population,
    /// Population mean of each potential-outcome column.
    arm_means: Vec<f64>,
    costs: Option<CostModel>,
}

fn truth_of(pop: &Population, setting: Setting) -> Result<PopulationTruth> {
    let slope = population_ols_coeffs(pop, 1)?[1] - population_ols_coeffs(pop, 0)?[1];
    let b = pop.baseline();
    let m = mean(b);
    let sd = (b.iter().map(|x| (x - m).powi(2)).collect::<KahanSum>().total() / b.len() as f64).sqrt();
    let oracle = oracle_regime(pop)?;
    let col_mean = |k: usize| pop.po().column(k).iter().copied().collect::<KahanSum>().total() / pop.n_plots() as f64;
    Ok(PopulationTruth {
        setting,
        pate: pate(pop, 1)?,
        moderator: slope * sd,
        oracle_value: oracle.realized_mean.unwrap_or(f64::NAN),
        control_mean: col_mean(0),
        treated_mean: col_mean(1),
    })
}

fn run_replicate(ctx: &Context, scenario: &Scenario, r: usize) -> Result<Replicate> {
    let grid = ctx.grid;
    let spec = DesignSpec::balanced(scenario.n, scenario.samples_per_plot, grid.sd_within_plot);
    let mut rng = seed::derived_rng(grid.master_seed, "replicate", &scenario.keys(r));
    let study = enroll_and_assign_with(ctx.pop, &spec, &mut rng)?;
    let alpha = grid.alpha;

    let ols = ols_interaction(
        &study,
        alpha,
        OlsOptions {
            sandwich: grid.sandwich,
            standardize: false,
        },
    )?;
    let ols_mod = ols_interaction(
        &study,
        alpha,
        OlsOptions {
            sandwich: grid.sandwich,
            standardize: true,
        },
    )?;
    let estimates = [
        diff_in_means(&study, alpha)?,
        diff_in_diffs(&study, alpha)?,
        ols.tau,
        ols_mod.moderators[0],
        naive_moderator(&study, alpha, grid.sandwich)?,
    ];

    let coeffs = fit_per_arm(&study)?;
    let imputed = impute_population(&coeffs, ctx.pop.covariates())?;
    let estimated = crate::population::papo(ctx.pop, &optimal_unconstrained(&imputed)?.regime)?;
    let restricted = ctx.arm_means[optimal_restricted(&study, 1)?.regime[0]];
    let budgeted = match &ctx.costs {
        Some(c) => {
            let regime = optimal_budgeted(&imputed, c, BudgetSolver::LpRounding)?;
            Some(crate::population::papo(ctx.pop, &regime.regime)?)
        }
        None => None,
    };
    Ok(Replicate {
        estimates,
        estimated,
        restricted,
        budgeted,
    })
}

fn summarize(
    scenario: Scenario,
    truth: &PopulationTruth,
    reps: &[Replicate],
    n_failed: usize,
) -> (Vec<MetricsRow>, PolicyRow) {
    let r = reps.len() as f64;
    let mut warnings = Vec::new();
    if reps.len() < 2 {
        warnings.push("single_replicate".to_string());
    }
    if n_failed > 0 {
        warnings.push(format!("failed_replicates={n_failed}"));
    }
    let warnings = warnings.join(";");

    let avg = |f: &dyn Fn(&Replicate) -> f64| reps.iter().map(f).collect::<KahanSum>().total() / r;
    let metrics = ESTIMATORS
        .iter()
        .enumerate()
        .map(|(j, &(name, target))| {
            let t = match target {
                Target::Pate => truth.pate,
                Target::Moderator => truth.moderator,
            };
            let errors: Vec<f64> = reps.iter().map(|x| x.estimates[j].estimate - t).collect();
            let bias = mean(&errors);
            let mse = errors.iter().map(|e| e * e).collect::<KahanSum>().total() / r;
            MetricsRow {
                scenario,
                estimator: name.to_string(),
                target,
                truth: t,
                bias,
                rmse: mse.sqrt(),
                ci_width: avg(&|x| x.estimates[j].width()),
                coverage: avg(&|x| f64::from(u8::from(x.estimates[j].covers(t)))),
                power: (target == Target::Pate)
                    .then(|| avg(&|x| f64::from(u8::from(x.estimates[j].rejects_zero())))),
                est_var: errors.iter().map(|e| (e - bias).powi(2)).collect::<KahanSum>().total() / r,
                mc_se: if reps.len() < 2 {
                    f64::NAN
                } else {
                    (sample_variance(&errors) / r).sqrt()
                },
                n_ok: reps.len(),
                n_failed,
                warnings: warnings.clone(),
            }
        })
        .collect();

    let gaps: Vec<f64> = reps.iter().map(|x| x.estimated - x.restricted).collect();
    let policy = PolicyRow {
        scenario,
        oracle: truth.oracle_value,
        estimated: avg(&|x| x.estimated),
        restricted: avg(&|x| x.restricted),
        budgeted: reps
            .iter()
            .map(|x| x.budgeted)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.into_iter().collect::<KahanSum>().total() / r),
        gap: mean(&gaps),
        gap_se: if reps.len() < 2 {
            f64::NAN
        } else {
            (sample_variance(&gaps) / r).sqrt()
        },
        n_ok: reps.len(),
    };
    (metrics, policy)
}

fn run_scenario(ctx: &Context, truth: &PopulationTruth, scenario: Scenario) -> Result<(Vec<MetricsRow>, PolicyRow)> {
    let total = ctx.grid.n_replicates;
    let outcomes: Vec<Result<Replicate>> = (0..total)
        .into_par_iter()
        .map(|r| run_replicate(ctx, &scenario, r))
        .collect();
    let mut reps = Vec::with_capacity(total);
    let mut failed = 0;
    for o in outcomes {
        match o {
            Ok(x) => reps.push(x),
            Err(_) => failed += 1,
        }
    }
    let allowed = (ctx.grid.max_failure_rate * total as f64).floor() as usize;
    if failed > allowed || reps.is_empty() {
        return Err(Error::ScenarioAbort {
            scenario: scenario.label(),
            failed,
            total,
        });
    }
    Ok(summarize(scenario, truth, &reps, failed))
}

/// Generates the population for `setting`, seeded from its parameters.
pub fn scenario_population(grid: &ScenarioGrid, setting: Setting) -> Result<Population> {
    let mut params = grid.base_params;
    params.tau = setting.tau;
    params.beta_mod = setting.beta_mod;
    params.sd_eps1 = setting.sd_eps1;
    generate_population(&params, seed::derive(grid.master_seed, "population", &setting.keys()))
}

/// Runs every scenario of the grid.
///
/// Replicates run in parallel on the current rayon pool, but results are
/// gathered in replicate order and reduced with compensated sums, so output
/// does not depend on the thread count. A replicate in which any estimator or
/// policy fit fails is dropped as a whole; a scenario losing more than
/// `max_failure_rate` of its replicates aborts the run.
pub fn run_grid(grid: &ScenarioGrid) -> Result<GridResult> {
    grid.validate()?;
    let mut out = GridResult {
        truths: Vec::new(),
        metrics: Vec::new(),
        policy: Vec::new(),
    };
    for &tau in &grid.tau_values {
        for &beta_mod in &grid.beta_mod_values {
            for &sd_eps1 in &grid.sd_eps1_values {
                let setting = Setting {
                    tau,
                    beta_mod,
                    sd_eps1,
                };
                let pop = scenario_population(grid, setting)?;
                let truth = truth_of(&pop, setting)?;
                let costs = match &grid.costs {
                    Some(c) => Some(CostModel::uniform(pop.n_plots(), &c.arm_costs, c.budget)?),
                    None => None,
                };
                let ctx = Context {
                    grid,
                    pop: &pop,
                    arm_means: vec![truth.control_mean, truth.treated_mean],
                    costs,
                };
                for &n in &grid.n_values {
                    for &samples_per_plot in &grid.samples_per_plot_values {
                        let scenario = Scenario {
                            setting,
                            n,
                            samples_per_plot,
                        };
                        let (metrics, policy) = run_scenario(&ctx, &truth, scenario)?;
                        out.metrics.extend(metrics);
                        out.policy.push(policy);
                    }
                }
                out.truths.push(truth);
            }
        }
    }
    Ok(out)
}
