//! Finite populations of potential outcomes.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::linalg::LeastSquares;
use crate::seed;
use crate::stats::KahanSum;

/// A finite population of `N` plots with `K` potential outcomes each.
///
/// Arm 0 is control. The covariate matrix always starts with a column of ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    baseline: Vec<f64>,
    po: DMatrix<f64>,
    covariates: DMatrix<f64>,
}

impl Population {
    pub fn new(baseline: Vec<f64>, po: DMatrix<f64>, covariates: DMatrix<f64>) -> Result<Self> {
        let n = baseline.len();
        if n < 2 {
            return Err(Error::Dimension(format!("population needs N >= 2 plots, got {n}")));
        }
        if po.nrows() != n || covariates.nrows() != n {
            return Err(Error::Dimension(format!(
                "baseline has {n} plots, potential outcomes {} rows, covariates {} rows",
                po.nrows(),
                covariates.nrows()
            )));
        }
        if po.ncols() < 2 {
            return Err(Error::Dimension(format!(
                "population needs K >= 2 arms, got {}",
                po.ncols()
            )));
        }
        if covariates.ncols() < 1 {
            return Err(Error::Dimension("covariates need an intercept column".into()));
        }
        if covariates.column(0).iter().any(|&x| x != 1.0) {
            return Err(Error::Dimension(
                "first covariate column must be identically 1".into(),
            ));
        }
        if baseline.iter().chain(po.iter()).chain(covariates.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Schema("population contains non-finite values".into()));
        }
        Ok(Self {
            baseline,
            po,
            covariates,
        })
    }

    /// Population whose covariates are `[1, b_i]`.
    pub fn with_baseline_covariate(baseline: Vec<f64>, po: DMatrix<f64>) -> Result<Self> {
        let covariates = baseline_design(&baseline);
        Self::new(baseline, po, covariates)
    }

    pub fn n_plots(&self) -> usize {
        self.baseline.len()
    }

    pub fn n_arms(&self) -> usize {
        self.po.ncols()
    }

    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    pub fn po(&self) -> &DMatrix<f64> {
        &self.po
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    /// Individual treatment effects `y_i(arm) - y_i(0)`.
    pub fn ite(&self, arm: usize) -> Vec<f64> {
        (0..self.n_plots())
            .map(|i| self.po[(i, arm)] - self.po[(i, 0)])
            .collect()
    }

    /// Writes `plot_id,baseline,y0,y1[,y2...]` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["plot_id".to_string(), "baseline".to_string()];
        header.extend((0..self.n_arms()).map(|k| format!("y{k}")));
        w.write_record(&header)?;
        for i in 0..self.n_plots() {
            let mut rec = vec![i.to_string(), fmt_full(self.baseline[i])];
            rec.extend((0..self.n_arms()).map(|k| fmt_full(self.po[(i, k)])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let n_arms = headers.len().saturating_sub(2);
        let expected: Vec<String> = ["plot_id".to_string(), "baseline".to_string()]
            .into_iter()
            .chain((0..n_arms).map(|k| format!("y{k}")))
            .collect();
        if headers.iter().ne(expected.iter().map(String::as_str)) || n_arms < 2 {
            return Err(Error::Schema(format!(
                "population header must be plot_id,baseline,y0,y1[,...], got {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut baseline = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let id: usize = parse_field(&rec, 0, line)?;
            if id != baseline.len() {
                return Err(Error::Schema(format!(
                    "row {}: plot_id {id} out of sequence",
                    line + 2
                )));
            }
            baseline.push(parse_field(&rec, 1, line)?);
            for k in 0..n_arms {
                values.push(parse_field::<f64>(&rec, 2 + k, line)?);
            }
        }
        let po = DMatrix::from_row_slice(baseline.len(), n_arms, &values);
        Self::with_baseline_covariate(baseline, po)
    }
}

pub(crate) fn fmt_full(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    line: usize,
) -> Result<T> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| Error::Schema(format!("row {}: missing column {idx}", line + 2)))?;
    raw.trim().parse().map_err(|_| {
        Error::Schema(format!("row {}: cannot parse `{raw}` in column {idx}", line + 2))
    })
}

/// `[1, b_i]` design.
pub fn baseline_design(baseline: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(baseline.len(), 2, |i, j| if j == 0 { 1.0 } else { baseline[i] })
}

/// Parameters of the synthetic population generator. All outcomes in %SOC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationParams {
    /// Mean baseline SOC.
    pub mu_b: f64,
    /// Across-plot SD of baseline SOC.
    pub sd_b_across: f64,
    /// Mean change from baseline under control.
    pub mean_control_change: f64,
    /// Across-plot SD of the change under control.
    pub sd_control_change: f64,
    /// Average treatment effect.
    pub tau: f64,
    /// Slope of the treatment effect per SD of baseline.
    pub beta_mod: f64,
    /// SD of idiosyncratic treatment-effect noise.
    pub sd_eps1: f64,
    pub n_plots: usize,
}

impl PopulationParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("mu_b", self.mu_b),
            ("sd_b_across", self.sd_b_across),
            ("mean_control_change", self.mean_control_change),
            ("sd_control_change", self.sd_control_change),
            ("tau", self.tau),
            ("beta_mod", self.beta_mod),
            ("sd_eps1", self.sd_eps1),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(param(name, format!("must be finite, got {v}")));
            }
        }
        if self.sd_b_across <= 0.0 {
            return Err(param("sd_b_across", "must be > 0"));
        }
        if self.sd_control_change < 0.0 {
            return Err(param("sd_control_change", "must be >= 0"));
        }
        if self.sd_eps1 < 0.0 {
            return Err(param("sd_eps1", "must be >= 0"));
        }
        if self.n_plots < 2 {
            return Err(param("n_plots", "must be >= 2"));
        }
        Ok(())
    }
}

/// Draws a binary population:
///
/// ```text
/// b_i   ~ N(mu_b, sd_b_across^2)
/// y_i(0) = b_i + e0_i,                       e0_i ~ N(mean_control_change, sd_control_change^2)
/// y_i(1) = y_i(0) + tau + beta_mod * bt_i + e1_i,  e1_i ~ N(0, sd_eps1^2)
/// ```
///
/// where `bt_i` is the baseline standardized over the realized population
/// (mean 0, SD 1 with the `N` denominator).
pub fn generate_population(params: &PopulationParams, seed: u64) -> Result<Population> {
    params.validate()?;
    let n = params.n_plots;
    let mut rng = seed::rng(seed);
    let normal = |m: f64, s: f64| Normal::new(m, s).map_err(|e| param("generator", e.to_string()));

    let base_dist = normal(params.mu_b, params.sd_b_across)?;
    let baseline: Vec<f64> = (0..n).map(|_| base_dist.sample(&mut rng)).collect();
    let change = normal(params.mean_control_change, params.sd_control_change)?;
    let y0: Vec<f64> = baseline.iter().map(|b| b + change.sample(&mut rng)).collect();

    let mean_b = baseline.iter().copied().collect::<KahanSum>().total() / n as f64;
    let sd_b = (baseline.iter().map(|b| (b - mean_b).powi(2)).collect::<KahanSum>().total()
        / n as f64)
        .sqrt();
    if sd_b == 0.0 {
        return Err(param("sd_b_across", "realized baseline has zero spread"));
    }
    let eps1 = normal(0.0, params.sd_eps1)?;
    let y1: Vec<f64> = (0..n)
        .map(|i| {
            let standardized = (baseline[i] - mean_b) / sd_b;
            y0[i] + params.tau + params.beta_mod * standardized + eps1.sample(&mut rng)
        })
        .collect();

    let po = DMatrix::from_fn(n, 2, |i, k| if k == 0 { y0[i] } else { y1[i] });
    Population::with_baseline_covariate(baseline, po)
}

/// Population average potential outcome under `regime`.
pub fn papo(pop: &Population, regime: &[usize]) -> Result<f64> {
    if regime.len() != pop.n_plots() {
        return Err(Error::Dimension(format!(
            "regime has length {} for a population of {}",
            regime.len(),
            pop.n_plots()
        )));
    }
    let k = pop.n_arms();
    let mut s = KahanSum::default();
    for (i, &z) in regime.iter().enumerate() {
        if z >= k {
            return Err(Error::Dimension(format!("arm {z} out of range 0..{k}")));
        }
        s.add(pop.po[(i, z)]);
    }
    Ok(s.total() / pop.n_plots() as f64)
}

/// Population average treatment effect of `arm` against control.
pub fn pate(pop: &Population, arm: usize) -> Result<f64> {
    if arm >= pop.n_arms() {
        return Err(Error::Dimension(format!(
            "arm {arm} out of range 0..{}",
            pop.n_arms()
        )));
    }
    if arm == 0 {
        return Ok(0.0);
    }
    let s: KahanSum = pop.ite(arm).into_iter().collect();
    Ok(s.total() / pop.n_plots() as f64)
}

/// Finite-population least-squares coefficients of `y(arm)` on the covariates.
pub fn population_ols_coeffs(pop: &Population, arm: usize) -> Result<DVector<f64>> {
    if arm >= pop.n_arms() {
        return Err(Error::Dimension(format!(
            "arm {arm} out of range 0..{}",
            pop.n_arms()
        )));
    }
    let y = pop.po.column(arm).into_owned();
    LeastSquares::fit(&pop.covariates, &y, None).map(|f| f.coefficients)
}
