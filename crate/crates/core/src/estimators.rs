//! Design-based estimators of the PATE and of moderator effects for binary
//! studies, with Wald intervals.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::ObservedStudy;
use crate::error::{param, Error, Result};
use crate::linalg::LeastSquares;
use crate::population::fmt_full;
use crate::stats::{mean, sample_variance, two_sided_critical};

/// Point estimate with a variance estimate and an equal-tailed Wald interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateWithCI {
    pub estimate: f64,
    pub variance: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub alpha: f64,
}

impl EstimateWithCI {
    pub fn wald(estimate: f64, variance: f64, alpha: f64) -> Self {
        let half = two_sided_critical(alpha) * variance.sqrt();
        Self {
            estimate,
            variance,
            ci_lower: estimate - half,
            ci_upper: estimate + half,
            alpha,
        }
    }

    pub fn width(&self) -> f64 {
        self.ci_upper - self.ci_lower
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }

    /// One-sided rejection of "no positive effect": the lower limit is above 0.
    pub fn rejects_zero(&self) -> bool {
        self.ci_lower > 0.0
    }
}

/// Writes `estimator,estimate,variance,ci_lower,ci_upper,alpha` rows.
pub fn write_estimates_csv<W: Write>(writer: W, rows: &[(String, EstimateWithCI)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["estimator", "estimate", "variance", "ci_lower", "ci_upper", "alpha"])?;
    for (name, e) in rows {
        w.write_record([
            name.clone(),
            fmt_full(e.estimate),
            fmt_full(e.variance),
            fmt_full(e.ci_lower),
            fmt_full(e.ci_upper),
            fmt_full(e.alpha),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Weights on the squared residuals in the sandwich meat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sandwich {
    /// `e_i^2`
    #[default]
    Hc0,
    /// `e_i^2 / (1 - h_ii)`
    Hc2,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OlsOptions {
    pub sandwich: Sandwich,
    /// Center and scale non-intercept covariates by their sample SD before
    /// fitting, so moderator coefficients are per SD of the covariate.
    pub standardize: bool,
}

/// The interacted regression behind [`ols_interaction`].
#[derive(Debug, Clone)]
pub struct InteractionFit {
    /// `[intercept, treatment, covariates..., treatment x centered covariates...]`
    pub coeffs: DVector<f64>,
    pub sandwich_cov: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub fitted: DVector<f64>,
    pub design_rows: DMatrix<f64>,
    pub column_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct OlsInteraction {
    pub tau: EstimateWithCI,
    /// One entry per non-intercept covariate.
    pub moderators: Vec<EstimateWithCI>,
    pub fit: InteractionFit,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(param("alpha", format!("must lie in (0, 1), got {alpha}")))
    }
}

fn require_binary(study: &ObservedStudy) -> Result<()> {
    if study.n_arms() != 2 {
        return Err(Error::Design(format!(
            "binary study required, found {} arms",
            study.n_arms()
        )));
    }
    Ok(())
}

fn two_sample(study: &ObservedStudy, values: &[f64], alpha: f64) -> Result<EstimateWithCI> {
    check_alpha(alpha)?;
    require_binary(study)?;
    let treated = study.select(1, values);
    let control = study.select(0, values);
    if treated.len() < 2 || control.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "each arm needs at least 2 plots, got {} control and {} treated",
            control.len(),
            treated.len()
        )));
    }
    let estimate = mean(&treated) - mean(&control);
    let variance = sample_variance(&control) / control.len() as f64
        + sample_variance(&treated) / treated.len() as f64;
    Ok(EstimateWithCI::wald(estimate, variance, alpha))
}

/// `Ybar_1 - Ybar_0` with variance `s0^2/n0 + s1^2/n1`.
pub fn diff_in_means(study: &ObservedStudy, alpha: f64) -> Result<EstimateWithCI> {
    two_sample(study, study.outcome_obs(), alpha)
}

/// Difference in means of `D_i = Y_i - B_i`.
pub fn diff_in_diffs(study: &ObservedStudy, alpha: f64) -> Result<EstimateWithCI> {
    two_sample(study, &study.differences(), alpha)
}

/// Centers and scales each column of `x` by its sample mean and SD.
fn standardize_columns(x: &mut DMatrix<f64>, first_name: usize) -> Result<()> {
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        let m = mean(&col);
        let sd = sample_variance(&col).sqrt();
        if !(sd > 0.0) {
            return Err(Error::Singular {
                column: first_name + j,
                name: format!("x{}", j + 1),
            });
        }
        x.column_mut(j).apply(|v| *v = (*v - m) / sd);
    }
    Ok(())
}

fn sandwich_cov(
    ls: &LeastSquares,
    design: &DMatrix<f64>,
    kind: Sandwich,
) -> Result<DMatrix<f64>> {
    let bread = ls.xtx_inverse();
    let mut weights: Vec<f64> = ls.residuals.iter().map(|e| e * e).collect();
    if kind == Sandwich::Hc2 {
        let h = ls.leverage(design);
        for (w, hi) in weights.iter_mut().zip(h.iter()) {
            let denom = 1.0 - hi;
            if denom <= 1e-12 {
                return Err(Error::InsufficientData(
                    "observation with leverage one; HC2 undefined".into(),
                ));
            }
            *w /= denom;
        }
    }
    let q = design.ncols();
    let mut meat = DMatrix::zeros(q, q);
    for (i, w) in weights.iter().enumerate() {
        let row = design.row(i);
        meat += row.transpose() * row * *w;
    }
    let v = &bread * meat * &bread;
    Ok((&v + v.transpose()) * 0.5)
}

/// Regression of `Y` on `[1, Z, X, Z (X - Xbar)]` with a sandwich covariance.
///
/// `Xbar` is the pooled sample mean. The treatment coefficient estimates the
/// PATE and the interaction coefficients estimate the moderator effects.
pub fn ols_interaction(
    study: &ObservedStudy,
    alpha: f64,
    options: OlsOptions,
) -> Result<OlsInteraction> {
    check_alpha(alpha)?;
    require_binary(study)?;
    let n = study.n();
    let p = study.covariates_obs().ncols();
    if n <= 2 * p {
        return Err(Error::InsufficientData(format!(
            "{n} plots for {} coefficients",
            2 * p
        )));
    }
    let mut x = study.covariates_obs().columns(1, p - 1).into_owned();
    if options.standardize {
        standardize_columns(&mut x, 2)?;
    }
    let xbar: Vec<f64> = x.column_iter().map(|c| c.mean()).collect();
    let z: Vec<f64> = study.arm().iter().map(|&a| a as f64).collect();

    let q = 2 * p;
    let design = DMatrix::from_fn(n, q, |i, j| match j {
        0 => 1.0,
        1 => z[i],
        j if j < p + 1 => x[(i, j - 2)],
        j => z[i] * (x[(i, j - p - 1)] - xbar[j - p - 1]),
    });
    let mut names = vec!["intercept".to_string(), "treatment".to_string()];
    names.extend((1..p).map(|j| format!("x{j}")));
    names.extend((1..p).map(|j| format!("treatment:x{j}")));
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();

    let y = DVector::from_column_slice(study.outcome_obs());
    let ls = LeastSquares::fit(&design, &y, Some(&name_refs))?;
    let cov = sandwich_cov(&ls, &design, options.sandwich)?;

    let tau = EstimateWithCI::wald(ls.coefficients[1], cov[(1, 1)], alpha);
    let moderators = (p + 1..q)
        .map(|j| EstimateWithCI::wald(ls.coefficients[j], cov[(j, j)], alpha))
        .collect();
    Ok(OlsInteraction {
        tau,
        moderators,
        fit: InteractionFit {
            coeffs: ls.coefficients,
            sandwich_cov: cov,
            residuals: ls.residuals,
            fitted: ls.fitted,
            design_rows: design,
            column_names: names,
        },
    })
}

/// Slope of `D_i = Y_i - B_i` on the standardized baseline, ignoring arms.
///
/// This is the regression-to-the-mean prone estimator of the moderator
/// effect; it is kept as a foil for [`ols_interaction`].
pub fn naive_moderator(
    study: &ObservedStudy,
    alpha: f64,
    sandwich: Sandwich,
) -> Result<EstimateWithCI> {
    check_alpha(alpha)?;
    let n = study.n();
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} plots, need at least 3")));
    }
    let mut b = DMatrix::from_column_slice(n, 1, study.baseline_obs());
    standardize_columns(&mut b, 1)?;
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { b[(i, 0)] });
    let d = DVector::from_vec(study.differences());
    let ls = LeastSquares::fit(&design, &d, Some(&["intercept", "baseline"]))?;
    let cov = sandwich_cov(&ls, &design, sandwich)?;
    Ok(EstimateWithCI::wald(ls.coefficients[1], cov[(1, 1)], alpha))
}
