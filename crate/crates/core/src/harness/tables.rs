use std::io::Write;

use serde::{Deserialize, Serialize};

use super::run::{GridResult, MetricsRow, PolicyRow, Scenario, Setting, Target};
use crate::design::SamplesPerPlot;
use crate::error::Result;
use crate::stats::KahanSum;

fn avg(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = KahanSum::default();
    let mut n = 0usize;
    for x in xs {
        s.add(x);
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s.total() / n as f64
    }
}

/// PATE estimator performance at one study size, averaged uniformly over
/// every other grid factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub estimator: String,
    pub bias: f64,
    pub ci_width: f64,
    pub coverage: f64,
    pub rmse: f64,
    pub power: f64,
    pub n_scenarios: usize,
}

pub fn pate_summary(metrics: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    let mut ns: Vec<usize> = metrics.iter().map(|m| m.scenario.n).collect();
    ns.sort_unstable();
    ns.dedup();
    for n in ns {
        for est in estimator_names(metrics, Target::Pate) {
            let rows: Vec<&MetricsRow> = metrics
                .iter()
                .filter(|m| m.scenario.n == n && m.estimator == est)
                .collect();
            out.push(SummaryRow {
                n,
                estimator: est.clone(),
                bias: avg(rows.iter().map(|m| m.bias)),
                ci_width: avg(rows.iter().map(|m| m.ci_width)),
                coverage: avg(rows.iter().map(|m| m.coverage)),
                rmse: avg(rows.iter().map(|m| m.rmse)),
                power: avg(rows.iter().filter_map(|m| m.power)),
                n_scenarios: rows.len(),
            });
        }
    }
    out
}

fn estimator_names(metrics: &[MetricsRow], target: Target) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for m in metrics.iter().filter(|m| m.target == target) {
        if !names.contains(&m.estimator) {
            names.push(m.estimator.clone());
        }
    }
    names
}

/// Rejection rate of a PATE estimator, pooled over the residual noise
/// settings of one `(estimator, n, m, beta_mod, tau)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub estimator: String,
    pub n: usize,
    pub samples_per_plot: SamplesPerPlot,
    pub beta_mod: f64,
    pub tau: f64,
    /// `tau` as a fraction of mean baseline SOC.
    pub tau_rel: f64,
    pub power: f64,
    /// Binomial standard error over the pooled replicates.
    pub se: f64,
}

/// Groups rows by a key, keeping first-seen order.
fn group_by<'a, T, K: PartialEq>(rows: impl IntoIterator<Item = &'a T>, key: impl Fn(&T) -> K) -> Vec<(K, Vec<&'a T>)>
where
    T: 'a,
{
    let mut groups: Vec<(K, Vec<&T>)> = Vec::new();
    for r in rows {
        let k = key(r);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    groups
}

pub fn power_table(result: &GridResult, mu_b: f64) -> Vec<PowerRow> {
    let rows = result.metrics.iter().filter(|m| m.target == Target::Pate);
    group_by(rows, |m| {
        (
            m.estimator.clone(),
            m.scenario.n,
            m.scenario.samples_per_plot,
            m.scenario.setting.beta_mod.to_bits(),
            m.scenario.setting.tau.to_bits(),
        )
    })
    .into_iter()
    .map(|(_, g)| {
        let first = g[0];
        let reps: usize = g.iter().map(|m| m.n_ok).sum();
        let hits: f64 = g.iter().map(|m| m.power.unwrap_or(f64::NAN) * m.n_ok as f64).sum();
        let p = hits / reps as f64;
        PowerRow {
            estimator: first.estimator.clone(),
            n: first.scenario.n,
            samples_per_plot: first.scenario.samples_per_plot,
            beta_mod: first.scenario.setting.beta_mod,
            tau: first.scenario.setting.tau,
            tau_rel: first.scenario.setting.tau / mu_b,
            power: p,
            se: (p * (1.0 - p) / reps as f64).sqrt(),
        }
    })
    .collect()
}

/// Moderator estimator bias and coverage, pooled over effect sizes and
/// residual noise settings of one `(estimator, n, m, beta_mod)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttenuationRow {
    pub estimator: String,
    pub n: usize,
    pub samples_per_plot: SamplesPerPlot,
    pub beta_mod: f64,
    pub truth: f64,
    pub estimate: f64,
    pub bias: f64,
    pub bias_se: f64,
    pub coverage: f64,
    pub coverage_se: f64,
}

pub fn attenuation_table(result: &GridResult) -> Vec<AttenuationRow> {
    let rows = result.metrics.iter().filter(|m| m.target == Target::Moderator);
    group_by(rows, |m| {
        (
            m.estimator.clone(),
            m.scenario.n,
            m.scenario.samples_per_plot,
            m.scenario.setting.beta_mod.to_bits(),
        )
    })
    .into_iter()
    .map(|(_, g)| {
        let first = g[0];
        let k = g.len() as f64;
        let reps: usize = g.iter().map(|m| m.n_ok).sum();
        let bias = avg(g.iter().map(|m| m.bias));
        let truth = avg(g.iter().map(|m| m.truth));
        let coverage = avg(g.iter().map(|m| m.coverage));
        let bias_se = g.iter().map(|m| m.mc_se * m.mc_se).sum::<f64>().sqrt() / k;
        AttenuationRow {
            estimator: first.estimator.clone(),
            n: first.scenario.n,
            samples_per_plot: first.scenario.samples_per_plot,
            beta_mod: first.scenario.setting.beta_mod,
            truth,
            estimate: truth + bias,
            bias,
            bias_se,
            coverage,
            coverage_se: (coverage * (1.0 - coverage) / reps as f64).sqrt(),
        }
    })
    .collect()
}

/// Regime values for one population setting, averaged over study designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingPolicy {
    #[serde(flatten)]
    pub setting: Setting,
    pub oracle: f64,
    pub estimated: f64,
    pub restricted: f64,
    pub budgeted: Option<f64>,
    pub gap: f64,
    pub gap_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOverall {
    pub oracle: f64,
    pub estimated: f64,
    pub restricted: f64,
    pub budgeted: Option<f64>,
    pub gap: f64,
    pub gap_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub overall: PolicyOverall,
    pub by_setting: Vec<SettingPolicy>,
    pub scenarios: Vec<PolicyRow>,
}

fn pooled(rows: &[&PolicyRow]) -> PolicyOverall {
    let k = rows.len() as f64;
    let budgeted: Option<Vec<f64>> = rows.iter().map(|r| r.budgeted).collect();
    PolicyOverall {
        oracle: avg(rows.iter().map(|r| r.oracle)),
        estimated: avg(rows.iter().map(|r| r.estimated)),
        restricted: avg(rows.iter().map(|r| r.restricted)),
        budgeted: budgeted.map(avg),
        gap: avg(rows.iter().map(|r| r.gap)),
        gap_se: rows.iter().map(|r| r.gap_se * r.gap_se).sum::<f64>().sqrt() / k,
    }
}

pub fn policy_summary(result: &GridResult) -> PolicySummary {
    let all: Vec<&PolicyRow> = result.policy.iter().collect();
    let by_setting = group_by(result.policy.iter(), |r| {
        let s = r.scenario.setting;
        (s.tau.to_bits(), s.beta_mod.to_bits(), s.sd_eps1.to_bits())
    })
    .into_iter()
    .map(|(_, g)| {
        let p = pooled(&g);
        SettingPolicy {
            setting: g[0].scenario.setting,
            oracle: p.oracle,
            estimated: p.estimated,
            restricted: p.restricted,
            budgeted: p.budgeted,
            gap: p.gap,
            gap_se: p.gap_se,
        }
    })
    .collect();
    PolicySummary {
        overall: pooled(&all),
        by_setting,
        scenarios: result.policy.clone(),
    }
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn scenario_fields(s: &Scenario) -> [String; 5] {
    [
        fmt(s.setting.tau),
        fmt(s.setting.beta_mod),
        fmt(s.setting.sd_eps1),
        s.n.to_string(),
        s.samples_per_plot.to_string(),
    ]
}

pub const METRICS_HEADER: [&str; 18] = [
    "tau", "beta_mod", "sd_eps1", "n", "m", "estimator", "target", "truth", "bias", "rmse",
    "ci_width", "coverage", "power", "est_var", "mc_se", "n_ok", "n_failed", "warnings",
];

pub fn write_metrics_csv<W: Write>(writer: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        let mut rec: Vec<String> = scenario_fields(&r.scenario).into();
        rec.extend([
            r.estimator.clone(),
            match r.target {
                Target::Pate => "pate".into(),
                Target::Moderator => "moderator".into(),
            },
            fmt(r.truth),
            fmt(r.bias),
            fmt(r.rmse),
            fmt(r.ci_width),
            fmt(r.coverage),
            fmt_opt(r.power),
            fmt(r.est_var),
            fmt(r.mc_se),
            r.n_ok.to_string(),
            r.n_failed.to_string(),
            r.warnings.clone(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_power_csv<W: Write>(writer: W, rows: &[PowerRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["estimator", "n", "m", "beta_mod", "tau", "tau_rel", "power", "se"])?;
    for r in rows {
        w.write_record([
            r.estimator.clone(),
            r.n.to_string(),
            r.samples_per_plot.to_string(),
            fmt(r.beta_mod),
            fmt(r.tau),
            fmt(r.tau_rel),
            fmt(r.power),
            fmt(r.se),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_attenuation_csv<W: Write>(writer: W, rows: &[AttenuationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "estimator", "n", "m", "beta_mod", "truth", "estimate", "bias", "bias_se", "coverage",
        "coverage_se",
    ])?;
    for r in rows {
        w.write_record([
            r.estimator.clone(),
            r.n.to_string(),
            r.samples_per_plot.to_string(),
            fmt(r.beta_mod),
            fmt(r.truth),
            fmt(r.estimate),
            fmt(r.bias),
            fmt(r.bias_se),
            fmt(r.coverage),
            fmt(r.coverage_se),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pate_summary_csv<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["n", "estimator", "bias", "ci_width", "coverage", "rmse", "power", "n_scenarios"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.estimator.clone(),
            fmt(r.bias),
            fmt(r.ci_width),
            fmt(r.coverage),
            fmt(r.rmse),
            fmt(r.power),
            r.n_scenarios.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
