//! Multiple-choice knapsack: one arm per plot, additive costs, one budget.
//!
//! The LP relaxation is solved greedily on the upper convex hull of each
//! plot's `(cost, value)` points. At the LP optimum at most one plot is
//! fractional; [`BudgetSolver::LpRounding`] rounds it down to the cheaper
//! point of its support. [`BudgetSolver::Exact`] runs depth-first branch and
//! bound with the same relaxation as the bound. [`BudgetSolver::IntegerDp`]
//! is a dynamic program over integer costs.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use super::CostModel;
use crate::error::{param, Error, Result};

pub const DEFAULT_NODE_LIMIT: usize = 2_000_000;
const DP_CELL_LIMIT: usize = 50_000_000;
const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetSolver {
    /// LP relaxation rounded down; within one hull step of the optimum.
    LpRounding,
    /// Branch and bound. Falls back to the best incumbent when the node
    /// limit is hit, reporting the remaining gap.
    Exact { node_limit: usize },
    /// Dynamic program; costs must be integers.
    IntegerDp,
}

impl Default for BudgetSolver {
    fn default() -> Self {
        BudgetSolver::Exact {
            node_limit: DEFAULT_NODE_LIMIT,
        }
    }
}

pub(super) struct Solution {
    pub regime: Vec<usize>,
    /// Total (not mean) objective of the LP relaxation.
    pub upper_bound: f64,
    pub proven: bool,
}

#[derive(Debug, Clone, Copy)]
struct Point {
    arm: usize,
    cost: f64,
    value: f64,
}

#[derive(Debug, Clone, Copy)]
struct Step {
    plot: usize,
    /// Index into the plot's hull; taking the step moves from `to - 1` to `to`.
    to: usize,
    dc: f64,
    dv: f64,
}

struct Plots {
    /// Arms not dominated by a cheaper-or-equal arm, sorted by cost.
    frontier: Vec<Vec<Point>>,
    hull: Vec<Vec<Point>>,
    /// All hull steps, most efficient first.
    steps: Vec<Step>,
}

fn frontier(values: &DMatrix<f64>, cost: &DMatrix<f64>, i: usize) -> Vec<Point> {
    let mut pts: Vec<Point> = (0..values.ncols())
        .map(|k| Point {
            arm: k,
            cost: cost[(i, k)],
            value: values[(i, k)],
        })
        .collect();
    pts.sort_by(|a, b| {
        a.cost
            .total_cmp(&b.cost)
            .then(b.value.total_cmp(&a.value))
            .then(a.arm.cmp(&b.arm))
    });
    let mut out: Vec<Point> = Vec::with_capacity(pts.len());
    for p in pts {
        if out.last().is_none_or(|q| p.value > q.value && p.cost > q.cost) {
            out.push(p);
        }
    }
    out
}

fn upper_hull(front: &[Point]) -> Vec<Point> {
    let mut hull: Vec<Point> = Vec::with_capacity(front.len());
    for &p in front {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // drop b when it lies on or below the segment a -> p
            let lhs = (b.value - a.value) * (p.cost - a.cost);
            let rhs = (p.value - a.value) * (b.cost - a.cost);
            if lhs <= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

impl Plots {
    fn new(values: &DMatrix<f64>, costs: &CostModel) -> Self {
        let n = values.nrows();
        let frontier: Vec<Vec<Point>> = (0..n).map(|i| frontier(values, costs.cost(), i)).collect();
        let hull: Vec<Vec<Point>> = frontier.iter().map(|f| upper_hull(f)).collect();
        let mut steps = Vec::new();
        for (i, h) in hull.iter().enumerate() {
            for t in 1..h.len() {
                steps.push(Step {
                    plot: i,
                    to: t,
                    dc: h[t].cost - h[t - 1].cost,
                    dv: h[t].value - h[t - 1].value,
                });
            }
        }
        // efficiency dv/dc descending, compared by cross-multiplication
        steps.sort_by(|a, b| {
            (b.dv * a.dc)
                .partial_cmp(&(a.dv * b.dc))
                .unwrap_or(Ordering::Equal)
                .then(a.plot.cmp(&b.plot))
                .then(a.to.cmp(&b.to))
        });
        Self {
            frontier,
            hull,
            steps,
        }
    }

    fn cheapest_cost(&self, from: usize) -> f64 {
        self.hull[from..].iter().map(|h| h[0].cost).sum()
    }

    /// LP relaxation over plots `from..` with `budget`. Returns the objective
    /// and, when `level` is given, the rounded-down hull level of each plot.
    fn relax(&self, from: usize, budget: f64, mut level: Option<&mut [usize]>) -> Option<f64> {
        let base_cost = self.cheapest_cost(from);
        if base_cost > budget * (1.0 + EPS) + EPS {
            return None;
        }
        let mut value: f64 = self.hull[from..].iter().map(|h| h[0].value).sum();
        let mut remaining = budget - base_cost;
        for s in self.steps.iter().filter(|s| s.plot >= from) {
            if s.dc <= remaining {
                remaining -= s.dc;
                value += s.dv;
                if let Some(l) = level.as_deref_mut() {
                    l[s.plot] = s.to;
                }
            } else {
                value += s.dv * (remaining / s.dc);
                break;
            }
        }
        Some(value)
    }
}

pub(super) fn solve(values: &DMatrix<f64>, costs: &CostModel, solver: BudgetSolver) -> Result<Solution> {
    let budget = costs.budget();
    let plots = Plots::new(values, costs);
    let cheapest = plots.cheapest_cost(0);
    if cheapest > budget {
        return Err(Error::Infeasible { budget, cheapest });
    }
    match solver {
        BudgetSolver::LpRounding => Ok(lp_rounding(&plots, budget)),
        BudgetSolver::Exact { node_limit } => Ok(branch_and_bound(&plots, budget, node_limit)),
        BudgetSolver::IntegerDp => integer_dp(values, costs),
    }
}

fn lp_rounding(plots: &Plots, budget: f64) -> Solution {
    let n = plots.hull.len();
    let mut level = vec![0; n];
    let bound = plots
        .relax(0, budget, Some(&mut level))
        .expect("feasibility checked by caller");
    let regime = (0..n).map(|i| plots.hull[i][level[i]].arm).collect();
    Solution {
        regime,
        upper_bound: bound,
        proven: false,
    }
}

struct Search<'a> {
    plots: &'a Plots,
    current: Vec<usize>,
    best: Vec<usize>,
    best_value: f64,
    nodes: usize,
    node_limit: usize,
}

impl Search<'_> {
    fn dfs(&mut self, depth: usize, value: f64, remaining: f64) {
        if self.nodes >= self.node_limit {
            return;
        }
        self.nodes += 1;
        let n = self.plots.hull.len();
        if depth == n {
            if value > self.best_value {
                self.best_value = value;
                self.best.copy_from_slice(&self.current);
            }
            return;
        }
        match self.plots.relax(depth, remaining, None) {
            Some(rest) if value + rest > self.best_value + EPS * (1.0 + self.best_value.abs()) => {}
            _ => return,
        }
        // most valuable affordable arm first
        let options: Vec<Point> = self.plots.frontier[depth].iter().rev().copied().collect();
        for p in options {
            if p.cost <= remaining {
                self.current[depth] = p.arm;
                self.dfs(depth + 1, value + p.value, remaining - p.cost);
            }
        }
    }
}

fn branch_and_bound(plots: &Plots, budget: f64, node_limit: usize) -> Solution {
    let start = lp_rounding(plots, budget);
    let n = plots.hull.len();
    let value_of = |regime: &[usize]| -> f64 {
        regime
            .iter()
            .enumerate()
            .map(|(i, &arm)| {
                plots.frontier[i]
                    .iter()
                    .find(|p| p.arm == arm)
                    .map_or(f64::NEG_INFINITY, |p| p.value)
            })
            .sum()
    };
    let mut search = Search {
        plots,
        current: vec![0; n],
        best: start.regime.clone(),
        best_value: value_of(&start.regime),
        nodes: 0,
        node_limit,
    };
    search.dfs(0, 0.0, budget);
    Solution {
        upper_bound: start.upper_bound,
        proven: search.nodes < node_limit,
        regime: search.best,
    }
}

fn integer_dp(values: &DMatrix<f64>, costs: &CostModel) -> Result<Solution> {
    let (n, k) = values.shape();
    let cost = costs.cost();
    if cost.iter().any(|c| c.fract() != 0.0) {
        return Err(param("cost", "dynamic programming needs integer costs"));
    }
    let cap = costs.budget().floor() as usize;
    if (cap + 1).saturating_mul(n) > DP_CELL_LIMIT {
        return Err(param(
            "budget",
            format!("dynamic program too large: {n} plots x {} capacity cells", cap + 1),
        ));
    }
    let width = cap + 1;
    let mut best = vec![0.0_f64; width];
    let mut choice = vec![u16::MAX; n * width];
    for i in 0..n {
        let mut next = vec![f64::NEG_INFINITY; width];
        for w in 0..width {
            for a in 0..k {
                let c = cost[(i, a)] as usize;
                if c <= w && best[w - c] > f64::NEG_INFINITY {
                    let v = best[w - c] + values[(i, a)];
                    if v > next[w] {
                        next[w] = v;
                        choice[i * width + w] = a as u16;
                    }
                }
            }
        }
        best = next;
    }
    let mut regime = vec![0; n];
    let mut w = cap;
    for i in (0..n).rev() {
        let a = choice[i * width + w] as usize;
        regime[i] = a;
        w -= cost[(i, a)] as usize;
    }
    Ok(Solution {
        regime,
        upper_bound: best[cap],
        proven: true,
    })
}
