//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion, with
//! the measured values indented underneath, and exits non-zero if any
//! criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sequest::design::{assignment_enumeration, ObservedStudy, SamplesPerPlot};
use sequest::estimators::{diff_in_diffs, diff_in_means, ols_interaction, OlsOptions};
use sequest::harness::{
    attenuation_table, policy_summary, power_table, run_grid, pate_summary, write_metrics_csv,
    GridResult, MetricsRow, ScenarioGrid,
};
use sequest::linalg::least_squares;
use sequest::policy::{optimal_budgeted, BudgetSolver, CostModel};
use sequest::population::{pate, Population};

const MASTER_SEED: u64 = 20_240_917;

struct Report {
    lines: Vec<String>,
    ok: bool,
}

impl Report {
    fn new() -> Self {
        Self {
            lines: Vec::new(),
            ok: true,
        }
    }

    fn check(&mut self, pass: bool, line: String) {
        self.ok &= pass;
        self.lines.push(format!("{} {line}", if pass { "ok  " } else { "MISS" }));
    }

    fn note(&mut self, line: String) {
        self.lines.push(format!("     {line}"));
    }

    fn finish(self, id: &str, title: &str, secs: f64) -> bool {
        let tag = if self.ok { "[PASS]" } else { "[FAIL]" };
        println!("{tag} {id} {title} ({secs:.1}s)");
        for l in &self.lines {
            println!("       {l}");
        }
        self.ok
    }
}

// ---------------------------------------------------------------------------
// 1. PATE metrics over the default grid

/// Reference rows: (n, estimator, ci_width, coverage, rmse).
const REFERENCE: [(usize, &str, f64, f64, f64); 9] = [
    (10, "did", 1.42, 0.91, 0.37),
    (10, "dim", 1.49, 0.90, 0.39),
    (10, "ols", 1.36, 0.89, 0.37),
    (100, "did", 0.46, 0.95, 0.12),
    (100, "dim", 0.49, 0.94, 0.13),
    (100, "ols", 0.41, 0.94, 0.11),
    (1000, "did", 0.15, 0.95, 0.04),
    (1000, "dim", 0.16, 0.96, 0.04),
    (1000, "ols", 0.13, 0.95, 0.03),
];

fn criterion_pate_summary(result: &GridResult) -> Report {
    let mut r = Report::new();
    let rows = pate_summary(&result.metrics);
    for &(n, est, width, coverage, rmse) in &REFERENCE {
        let Some(row) = rows.iter().find(|x| x.n == n && x.estimator == est) else {
            r.check(false, format!("n={n} {est}: missing"));
            continue;
        };
        r.check(
            row.bias.abs() < 0.005,
            format!("n={n} {est} |bias| {:.4} < 0.005", row.bias.abs()),
        );
        r.check(
            (row.coverage - coverage).abs() <= 0.02,
            format!("n={n} {est} coverage {:.3} vs {coverage:.2} +-0.02", row.coverage),
        );
        r.check(
            (row.ci_width / width - 1.0).abs() <= 0.10,
            format!("n={n} {est} ci_width {:.3} vs {width:.2} +-10%", row.ci_width),
        );
        r.check(
            (row.rmse / rmse - 1.0).abs() <= 0.15,
            format!("n={n} {est} rmse {:.4} vs {rmse:.2} +-15%", row.rmse),
        );
    }
    r
}

// ---------------------------------------------------------------------------
// 2. OLS beats DiM beats DiD under strong moderation

fn criterion_ordering(result: &GridResult) -> Report {
    let mut r = Report::new();
    let beta = -0.5;
    let power = power_table(result, 2.34);
    let cell = |est: &str, n: usize, m: SamplesPerPlot, tau: f64| {
        power
            .iter()
            .find(|p| p.estimator == est && p.n == n && p.samples_per_plot == m && p.beta_mod == beta && p.tau == tau)
            .cloned()
    };
    let width = |est: &str, n: usize, m: SamplesPerPlot, tau: f64| {
        let rows: Vec<&MetricsRow> = result
            .metrics
            .iter()
            .filter(|x| {
                x.estimator == est
                    && x.scenario.n == n
                    && x.scenario.samples_per_plot == m
                    && x.scenario.setting.beta_mod == beta
                    && x.scenario.setting.tau == tau
            })
            .collect();
        rows.iter().map(|x| x.ci_width).sum::<f64>() / rows.len() as f64
    };
    let mut cells = 0;
    let mut width_misses = Vec::new();
    let mut power_misses = Vec::new();
    for p in power.iter().filter(|p| p.estimator == "ols" && p.beta_mod == beta) {
        let (n, m, tau) = (p.n, p.samples_per_plot, p.tau);
        let (Some(ols), Some(dim), Some(did)) = (cell("ols", n, m, tau), cell("dim", n, m, tau), cell("did", n, m, tau)) else {
            r.check(false, format!("missing power cell n={n} m={m} tau={tau}"));
            continue;
        };
        cells += 1;
        let (w_ols, w_dim) = (width("ols", n, m, tau), width("dim", n, m, tau));
        if w_ols >= w_dim {
            width_misses.push(format!("n={n} m={m} tau_rel={:.3}: {w_ols:.4} >= {w_dim:.4}", p.tau_rel));
        }
        let se1 = ols.se.hypot(dim.se);
        let se2 = dim.se.hypot(did.se);
        if ols.power < dim.power - 2.0 * se1 || dim.power < did.power - 2.0 * se2 {
            power_misses.push(format!(
                "n={n} m={m} tau_rel={:.3}: ols {:.3} dim {:.3} did {:.3}",
                p.tau_rel, ols.power, dim.power, did.power
            ));
        }
    }
    r.check(cells > 0, format!("{cells} (n, m, tau) cells at beta_mod=-0.5"));
    r.check(
        width_misses.is_empty(),
        format!("mean CI width OLS < DiM in every cell ({} misses)", width_misses.len()),
    );
    for m in width_misses {
        r.note(m);
    }
    r.check(
        power_misses.is_empty(),
        format!("power OLS >= DiM >= DiD within 2 SE ({} misses)", power_misses.len()),
    );
    for m in power_misses {
        r.note(m);
    }
    r
}

// ---------------------------------------------------------------------------
// 3. Policy values

fn criterion_policy(result: &GridResult) -> Report {
    let mut r = Report::new();
    let s = policy_summary(result);
    let o = &s.overall;
    r.check((o.oracle - 2.63).abs() <= 0.05, format!("oracle {:.3} vs 2.63 +-0.05", o.oracle));
    r.check(
        (o.estimated - 2.61).abs() <= 0.05,
        format!("estimated-optimal {:.3} vs 2.61 +-0.05", o.estimated),
    );
    r.check(
        (o.restricted - 2.50).abs() <= 0.05,
        format!("restricted {:.3} vs 2.50 +-0.05", o.restricted),
    );
    for p in &s.by_setting {
        let st = p.setting;
        let strict = p.gap > 2.0 * p.gap_se;
        let expect_strict = st.beta_mod != 0.0;
        let label = format!(
            "tau={:.4} beta_mod={} sd_eps1={:.3}: gap {:.4} (se {:.4})",
            st.tau, st.beta_mod, st.sd_eps1, p.gap, p.gap_se
        );
        r.check(
            p.gap >= -2.0 * p.gap_se && strict == expect_strict,
            format!("{label}, strict gap expected {expect_strict}"),
        );
    }
    let zero: Vec<_> = s.by_setting.iter().filter(|p| p.setting.tau == 0.0).collect();
    let k = zero.len() as f64;
    r.note(format!(
        "tau=0 slice: oracle {:.3} estimated {:.3} restricted {:.3}",
        zero.iter().map(|p| p.oracle).sum::<f64>() / k,
        zero.iter().map(|p| p.estimated).sum::<f64>() / k,
        zero.iter().map(|p| p.restricted).sum::<f64>() / k,
    ));
    r
}

// ---------------------------------------------------------------------------
// 4. Attenuation of the moderator estimate

fn criterion_attenuation(result: &GridResult) -> Report {
    let mut r = Report::new();
    let rows = attenuation_table(result);
    let ms = [
        SamplesPerPlot::Finite(5),
        SamplesPerPlot::Finite(30),
        SamplesPerPlot::Finite(100),
        SamplesPerPlot::Infinite,
    ];
    let find = |est: &str, m: SamplesPerPlot| {
        rows.iter()
            .find(|x| x.estimator == est && x.n == 1000 && x.beta_mod == -0.5 && x.samples_per_plot == m)
            .cloned()
    };
    let causal: Vec<_> = ms.iter().filter_map(|&m| find("ols_mod", m)).collect();
    if causal.len() != ms.len() {
        r.check(false, "missing n=1000 beta_mod=-0.5 moderator rows".into());
        return r;
    }
    for c in &causal {
        r.note(format!(
            "ols_mod m={}: bias {:.4} (se {:.4}) coverage {:.3}",
            c.samples_per_plot, c.bias, c.bias_se, c.coverage
        ));
    }
    for w in causal.windows(2) {
        let drop = w[0].bias.abs() - w[1].bias.abs();
        let se = w[0].bias_se.hypot(w[1].bias_se);
        r.check(
            drop > 2.0 * se,
            format!(
                "|bias| falls m={} -> m={} by {drop:.4} > 2 SE ({:.4})",
                w[0].samples_per_plot,
                w[1].samples_per_plot,
                2.0 * se
            ),
        );
    }
    for c in causal.iter().filter(|c| c.samples_per_plot != SamplesPerPlot::Infinite) {
        r.check(
            c.bias > 0.0,
            format!("m={} bias {:.4} points toward zero", c.samples_per_plot, c.bias),
        );
    }
    let inf = &causal[3];
    let five = &causal[0];
    r.check(inf.coverage >= 0.93, format!("coverage at m=inf {:.3} >= 0.93", inf.coverage));
    r.check(five.coverage <= 0.85, format!("coverage at m=5 {:.3} <= 0.85", five.coverage));
    for &m in &ms[..3] {
        match find("naive_mod", m) {
            Some(n) => r.check(n.coverage < 0.10, format!("naive m={m} coverage {:.3} < 0.10", n.coverage)),
            None => r.check(false, format!("naive m={m} missing")),
        }
    }
    r
}

// ---------------------------------------------------------------------------
// 5. Exact oracles

fn random_population(rng: &mut ChaCha8Rng, n: usize) -> Population {
    let baseline: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..4.0)).collect();
    let po = DMatrix::from_fn(n, 2, |i, k| baseline[i] + rng.random_range(-0.5..0.5) + k as f64 * rng.random_range(-1.0..1.0));
    Population::with_baseline_covariate(baseline, po).unwrap()
}

fn exhaustive_unbiasedness(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let pop = random_population(&mut rng, 6);
        let sate = pate(&pop, 1).unwrap();
        let source: Vec<usize> = (0..6).collect();
        let (mut dim, mut did, mut count) = (0.0, 0.0, 0.0);
        for arm in assignment_enumeration(6, 3).unwrap() {
            let s = ObservedStudy::noise_free(&pop, &source, &arm).unwrap();
            dim += diff_in_means(&s, 0.05).unwrap().estimate;
            did += diff_in_diffs(&s, 0.05).unwrap().estimate;
            count += 1.0;
        }
        worst = worst.max((dim / count - sate).abs()).max((did / count - sate).abs());
    }
    r.check(
        worst <= 1e-12,
        format!("(a) enumeration mean of DiM and DiD equals SATE, max error {worst:.2e}"),
    );
}

fn random_study(rng: &mut ChaCha8Rng, n: usize) -> ObservedStudy {
    let mut arm: Vec<usize> = (0..n).map(|i| usize::from(i < n / 2)).collect();
    for i in (1..n).rev() {
        arm.swap(i, rng.random_range(0..=i));
    }
    let baseline: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..4.0)).collect();
    let outcome: Vec<f64> = baseline
        .iter()
        .zip(&arm)
        .map(|(b, &z)| 0.3 + 0.8 * b + z as f64 * (0.4 - 0.5 * b) + rng.random_range(-0.6..0.6))
        .collect();
    ObservedStudy::new(baseline, outcome, arm, (0..n).collect()).unwrap()
}

fn did_is_dim_on_differences(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for i in 0..500 {
        let s = random_study(&mut rng, 4 + i % 40);
        let did = diff_in_diffs(&s, 0.05).unwrap();
        let on_diff = diff_in_means(&s.with_outcome(s.differences()).unwrap(), 0.05).unwrap();
        let same = did.estimate.to_bits() == on_diff.estimate.to_bits()
            && did.variance.to_bits() == on_diff.variance.to_bits()
            && did.ci_lower.to_bits() == on_diff.ci_lower.to_bits()
            && did.ci_upper.to_bits() == on_diff.ci_upper.to_bits();
        mismatches += usize::from(!same);
    }
    r.check(mismatches == 0, format!("(b) DiD == DiM on differences bitwise, {mismatches}/500 mismatches"));
}

/// Treatment-effect estimate assembled from per-arm simple regressions of
/// `Y` on `B`, with arm baseline means measured from the pooled mean.
fn ols_closed_form(s: &ObservedStudy) -> f64 {
    let b = s.baseline_obs();
    let y = s.outcome_obs();
    let bbar = b.iter().sum::<f64>() / b.len() as f64;
    let arm_terms = |z: usize| {
        let idx: Vec<usize> = (0..b.len()).filter(|&i| s.arm()[i] == z).collect();
        let k = idx.len() as f64;
        let mb = idx.iter().map(|&i| b[i]).sum::<f64>() / k;
        let my = idx.iter().map(|&i| y[i]).sum::<f64>() / k;
        let sxy: f64 = idx.iter().map(|&i| (b[i] - mb) * (y[i] - my)).sum();
        let sxx: f64 = idx.iter().map(|&i| (b[i] - mb).powi(2)).sum();
        my - (sxy / sxx) * (mb - bbar)
    };
    arm_terms(1) - arm_terms(0)
}

fn ols_identity(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..500 {
        let s = random_study(&mut rng, 6 + i % 60);
        let fit = ols_interaction(&s, 0.05, OlsOptions::default()).unwrap();
        worst = worst.max((fit.tau.estimate - ols_closed_form(&s)).abs());
    }
    r.check(worst <= 1e-8, format!("(c) OLS closed-form identity, max error {worst:.2e}"));
}

fn exhaustive_knapsack(values: &DMatrix<f64>, cost: &DMatrix<f64>, budget: f64) -> Option<f64> {
    let (n, k) = values.shape();
    let mut best: Option<f64> = None;
    let mut regime = vec![0usize; n];
    loop {
        let c: f64 = (0..n).map(|i| cost[(i, regime[i])]).sum();
        if c <= budget {
            let v: f64 = (0..n).map(|i| values[(i, regime[i])]).sum();
            if best.is_none_or(|b| v > b) {
                best = Some(v);
            }
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            regime[i] += 1;
            if regime[i] < k {
                break;
            }
            regime[i] = 0;
            i += 1;
        }
    }
}

fn knapsack_vs_exhaustive(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    let mut misses = Vec::new();
    for t in 0..1000 {
        let n = rng.random_range(1..=12);
        let k = rng.random_range(1..=3);
        let values = DMatrix::from_fn(n, k, |_, _| rng.random_range(-5.0..5.0));
        let cost = DMatrix::from_fn(n, k, |_, _| f64::from(rng.random_range(0..=6u8)));
        let cheapest: f64 = cost.row_iter().map(|row| row.min()).sum();
        let dearest: f64 = cost.row_iter().map(|row| row.max()).sum();
        let budget = (cheapest + rng.random_range(0.0..=1.0) * (dearest - cheapest)).floor();
        let truth = exhaustive_knapsack(&values, &cost, budget).expect("cheapest regime fits");
        let model = CostModel::new(cost.clone(), budget).unwrap();
        for (name, solver) in [("exact", BudgetSolver::default()), ("dp", BudgetSolver::IntegerDp)] {
            let got = optimal_budgeted(&values, &model, solver).unwrap();
            let v: f64 = got.regime.iter().enumerate().map(|(i, &z)| values[(i, z)]).sum();
            let c: f64 = got.regime.iter().enumerate().map(|(i, &z)| cost[(i, z)]).sum();
            if (v - truth).abs() > 1e-9 || c > budget {
                misses.push(format!("instance {t} {name}: value {v} vs {truth}, cost {c} / {budget}"));
            }
        }
        checked += 1;
    }
    r.check(
        misses.is_empty(),
        format!("(d) budgeted solvers match exhaustive search on {checked} instances ({} misses)", misses.len()),
    );
    for m in misses.iter().take(5) {
        r.note(m.clone());
    }
}

/// Solves `(A'A) x = A'y` by Gaussian elimination with partial pivoting.
fn normal_equations(a: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
    let p = a.ncols();
    let mut m = vec![vec![0.0; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            m[i][j] = (0..a.nrows()).map(|r| a[(r, i)] * a[(r, j)]).sum();
        }
        m[i][p] = (0..a.nrows()).map(|r| a[(r, i)] * y[r]).sum();
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, piv);
        for r in c + 1..p {
            let f = m[r][c] / m[c][c];
            for j in c..=p {
                m[r][j] -= f * m[c][j];
            }
        }
    }
    let mut x = vec![0.0; p];
    for c in (0..p).rev() {
        let s: f64 = (c + 1..p).map(|j| m[c][j] * x[j]).sum();
        x[c] = (m[c][p] - s) / m[c][c];
    }
    x
}

fn least_squares_vs_normal_equations(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let p = rng.random_range(1..=6);
        let n = rng.random_range(p + 2..=40);
        let a = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let y = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let got = least_squares(&a, &y).unwrap();
        let want = normal_equations(&a, &y);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    r.check(worst <= 1e-8, format!("(e) least squares vs normal equations, max error {worst:.2e}"));
}

fn criterion_oracles() -> Report {
    let mut r = Report::new();
    exhaustive_unbiasedness(&mut r);
    did_is_dim_on_differences(&mut r);
    ols_identity(&mut r);
    knapsack_vs_exhaustive(&mut r);
    least_squares_vs_normal_equations(&mut r);
    r
}

// ---------------------------------------------------------------------------
// 6. Determinism

fn metrics_bytes(grid: &ScenarioGrid, threads: usize) -> Vec<u8> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let result = pool.install(|| run_grid(grid)).unwrap();
    let mut out = Vec::new();
    write_metrics_csv(&mut out, &result.metrics).unwrap();
    out
}

fn criterion_determinism() -> Report {
    let mut r = Report::new();
    let grid = ScenarioGrid {
        tau_values: vec![0.1 / 0.66],
        beta_mod_values: vec![0.0, -0.5],
        n_values: vec![10, 100],
        samples_per_plot_values: vec![SamplesPerPlot::Finite(5), SamplesPerPlot::Infinite],
        n_replicates: 60,
        ..ScenarioGrid::standard(MASTER_SEED)
    };
    let one = metrics_bytes(&grid, 1);
    let again = metrics_bytes(&grid, 1);
    let four = metrics_bytes(&grid, 4);
    let seven = metrics_bytes(&grid, 7);
    r.check(one == again, "repeat run with one thread is byte-identical".into());
    r.check(one == four && one == seven, "1, 4 and 7 threads give byte-identical metrics.csv".into());
    r
}

fn main() -> ExitCode {
    let mut all = true;

    let t = Instant::now();
    all &= criterion_oracles().finish("5", "exact oracles", t.elapsed().as_secs_f64());

    let t = Instant::now();
    all &= criterion_determinism().finish("6", "determinism across runs and thread counts", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let default = run_grid(&ScenarioGrid::standard(MASTER_SEED)).expect("default grid runs");
    let grid_secs = t.elapsed().as_secs_f64();
    println!("       default grid: {} scenarios in {grid_secs:.1}s", default.policy.len());

    let t = Instant::now();
    let power = run_grid(&ScenarioGrid::power_grid(MASTER_SEED)).expect("power grid runs");
    let fig_secs = t.elapsed().as_secs_f64();

    all &= criterion_pate_summary(&default).finish("1", "PATE metrics over the default grid", grid_secs);
    all &= criterion_ordering(&power).finish("2", "estimator ordering under strong moderation", fig_secs);
    all &= criterion_policy(&default).finish("3", "policy values", 0.0);
    all &= criterion_attenuation(&default).finish("4", "attenuation of the moderator estimate", 0.0);

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
