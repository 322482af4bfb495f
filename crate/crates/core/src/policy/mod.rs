//! Estimated optimal treatment regimes.
//!
//! Potential outcomes of a target population are imputed from per-arm
//! regressions fitted on study data, then a regime is chosen per plot
//! (optionally under an additive budget) or uniformly across the population.

mod knapsack;

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::design::ObservedStudy;
use crate::error::{param, Error, Result};
use crate::linalg::LeastSquares;
use crate::population::{baseline_design, papo, parse_field, Population};
use crate::stats::{mean, KahanSum};

pub use knapsack::{BudgetSolver, DEFAULT_NODE_LIMIT};

/// Plot-specific treatment costs and an overall budget.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    cost: DMatrix<f64>,
    budget: f64,
}

impl CostModel {
    /// `cost` is `N x K`; `budget` may be `f64::INFINITY`.
    pub fn new(cost: DMatrix<f64>, budget: f64) -> Result<Self> {
        if cost.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(param("cost", "costs must be finite and >= 0"));
        }
        if budget.is_nan() || budget < 0.0 {
            return Err(param("budget", format!("must be >= 0, got {budget}")));
        }
        Ok(Self { cost, budget })
    }

    /// The same per-arm cost for every plot.
    pub fn uniform(n_plots: usize, arm_costs: &[f64], budget: f64) -> Result<Self> {
        let cost = DMatrix::from_fn(n_plots, arm_costs.len(), |_, k| arm_costs[k]);
        Self::new(cost, budget)
    }

    /// Reads `plot_id,c0,c1,...` with rows in plot order.
    pub fn read_csv<R: Read>(reader: R, budget: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let k = headers.len().saturating_sub(1);
        let expected: Vec<String> = std::iter::once("plot_id".to_string())
            .chain((0..k).map(|a| format!("c{a}")))
            .collect();
        if k == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Schema(format!(
                "cost header must be plot_id,c0,c1,..., got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut values = Vec::new();
        let mut n = 0;
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            check_plot_id(&rec, line, n)?;
            for a in 0..k {
                values.push(parse_field::<f64>(&rec, a + 1, line)?);
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Schema("cost file has no rows".into()));
        }
        Self::new(DMatrix::from_row_slice(n, k, &values), budget)
    }

    pub fn cost(&self) -> &DMatrix<f64> {
        &self.cost
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// Additive cost of a regime.
    pub fn total_cost(&self, regime: &[usize]) -> f64 {
        regime
            .iter()
            .enumerate()
            .map(|(i, &z)| self.cost[(i, z)])
            .collect::<KahanSum>()
            .total()
    }
}

/// A treatment assignment for every plot of a target population.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyRegime {
    #[serde(skip)]
    pub regime: Vec<usize>,
    pub predicted_mean: f64,
    /// Mean of the true potential outcomes under the regime; oracle only.
    pub realized_mean: Option<f64>,
    pub total_cost: Option<f64>,
    /// `None` when unconstrained.
    pub budget: Option<f64>,
    /// Objective of the relaxation minus the predicted mean (0 when exact).
    pub optimality_gap: f64,
}

impl PolicyRegime {
    pub fn with_realized(mut self, pop: &Population) -> Result<Self> {
        self.realized_mean = Some(realized_value(pop, &self)?);
        Ok(self)
    }

    pub fn with_costs(mut self, costs: &CostModel) -> Self {
        self.total_cost = Some(costs.total_cost(&self.regime));
        self.budget = costs.budget.is_finite().then_some(costs.budget);
        self
    }

    /// Writes `plot_id,arm`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["plot_id", "arm"])?;
        for (i, z) in self.regime.iter().enumerate() {
            w.write_record([i.to_string(), z.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the summary record as JSON.
    pub fn write_summary<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

fn check_plot_id(rec: &csv::StringRecord, line: usize, expected: usize) -> Result<()> {
    let id: usize = parse_field(rec, 0, line)?;
    if id != expected {
        return Err(Error::Schema(format!(
            "row {}: plot_id {id} out of order, expected {expected}",
            line + 2
        )));
    }
    Ok(())
}

/// Reads `plot_id,baseline` (0-based ids in order) into a `[1, b]` design.
pub fn read_covariates_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.iter().ne(["plot_id", "baseline"]) {
        return Err(Error::Schema(format!(
            "covariate header must be plot_id,baseline, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut baseline = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        check_plot_id(&rec, line, baseline.len())?;
        let b: f64 = parse_field(&rec, 1, line)?;
        if !b.is_finite() {
            return Err(Error::Schema(format!("row {}: non-finite baseline", line + 2)));
        }
        baseline.push(b);
    }
    if baseline.is_empty() {
        return Err(Error::Schema("covariate file has no rows".into()));
    }
    Ok(baseline_design(&baseline))
}

/// Least-squares coefficients of `Y` on the covariates within each arm.
pub fn fit_per_arm(study: &ObservedStudy) -> Result<Vec<DVector<f64>>> {
    let p = study.covariates_obs().ncols();
    (0..study.n_arms())
        .map(|k| {
            let (x, y) = study.arm_data(k);
            if x.nrows() <= p {
                return Err(Error::ArmFit {
                    arm: k,
                    reason: format!("{} plots for {p} coefficients", x.nrows()),
                });
            }
            LeastSquares::fit(&x, &y, None)
                .map(|f| f.coefficients)
                .map_err(|e| Error::ArmFit {
                    arm: k,
                    reason: e.to_string(),
                })
        })
        .collect()
}

/// `yhat_i(k) = x_i . beta(k)` for every plot and arm.
pub fn impute_population(
    coeffs: &[DVector<f64>],
    target_covariates: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = target_covariates.ncols();
    if coeffs.is_empty() {
        return Err(Error::Dimension("no arm coefficients".into()));
    }
    if let Some((k, c)) = coeffs.iter().enumerate().find(|(_, c)| c.len() != p) {
        return Err(Error::Dimension(format!(
            "arm {k} has {} coefficients for {p} covariates",
            c.len()
        )));
    }
    let mut out = DMatrix::zeros(target_covariates.nrows(), coeffs.len());
    for (k, c) in coeffs.iter().enumerate() {
        out.set_column(k, &(target_covariates * c));
    }
    Ok(out)
}

fn check_finite(imputed: &DMatrix<f64>) -> Result<()> {
    if imputed.ncols() == 0 || imputed.nrows() == 0 {
        return Err(Error::Dimension("empty imputation matrix".into()));
    }
    if imputed.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dimension("imputed outcomes must be finite".into()));
    }
    Ok(())
}

/// Per-plot argmax; ties go to the lower arm index.
pub fn optimal_unconstrained(imputed: &DMatrix<f64>) -> Result<PolicyRegime> {
    check_finite(imputed)?;
    let mut total = KahanSum::default();
    let regime = imputed
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            total.add(row[best]);
            best
        })
        .collect();
    Ok(PolicyRegime {
        regime,
        predicted_mean: total.total() / imputed.nrows() as f64,
        realized_mean: None,
        total_cost: None,
        budget: None,
        optimality_gap: 0.0,
    })
}

/// Assigns every one of `n_plots` plots the arm with the largest observed mean.
pub fn optimal_restricted(study: &ObservedStudy, n_plots: usize) -> Result<PolicyRegime> {
    let k = study.n_arms();
    let means: Vec<f64> = (0..k)
        .map(|a| {
            let ys = study.outcomes_in(a);
            if ys.is_empty() {
                Err(Error::InsufficientData(format!("arm {a} has no plots")))
            } else {
                Ok(mean(&ys))
            }
        })
        .collect::<Result<_>>()?;
    if means.is_empty() {
        return Err(Error::InsufficientData("study has no plots".into()));
    }
    let mut best = 0;
    for a in 1..k {
        if means[a] > means[best] {
            best = a;
        }
    }
    Ok(PolicyRegime {
        regime: vec![best; n_plots],
        predicted_mean: means[best],
        realized_mean: None,
        total_cost: None,
        budget: None,
        optimality_gap: 0.0,
    })
}

/// Best regime whose additive cost fits the budget.
///
/// An infinite budget reduces to [`optimal_unconstrained`].
pub fn optimal_budgeted(
    imputed: &DMatrix<f64>,
    costs: &CostModel,
    solver: BudgetSolver,
) -> Result<PolicyRegime> {
    check_finite(imputed)?;
    if costs.cost.shape() != imputed.shape() {
        return Err(Error::Dimension(format!(
            "cost matrix is {:?} but imputations are {:?}",
            costs.cost.shape(),
            imputed.shape()
        )));
    }
    if costs.budget.is_infinite() {
        return Ok(optimal_unconstrained(imputed)?.with_costs(costs));
    }
    let solution = knapsack::solve(imputed, costs, solver)?;
    let n = imputed.nrows() as f64;
    let predicted: KahanSum = solution
        .regime
        .iter()
        .enumerate()
        .map(|(i, &z)| imputed[(i, z)])
        .collect();
    let predicted_mean = predicted.total() / n;
    let regime = PolicyRegime {
        regime: solution.regime,
        predicted_mean,
        realized_mean: None,
        total_cost: None,
        budget: None,
        optimality_gap: if solution.proven {
            0.0
        } else {
            (solution.upper_bound / n - predicted_mean).max(0.0)
        },
    };
    Ok(regime.with_costs(costs))
}

/// Mean of the true potential outcomes under the regime.
pub fn realized_value(pop: &Population, regime: &PolicyRegime) -> Result<f64> {
    papo(pop, &regime.regime)
}

/// Regime chosen from the true potential outcomes.
pub fn oracle_regime(pop: &Population) -> Result<PolicyRegime> {
    optimal_unconstrained(pop.po())?.with_realized(pop)
}
