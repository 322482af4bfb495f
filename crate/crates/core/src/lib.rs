//! Design-based inference and treatment policies for randomized soil-carbon
//! trials, with a Monte Carlo harness for comparing estimators.
//!
//! The pieces line up with a trial's life cycle: [`population`] generates a
//! finite population of plots with potential outcomes, [`design`] enrolls and
//! randomizes a study and simulates composite-sample measurement error,
//! [`estimators`] computes effect estimates with Wald intervals, and
//! [`policy`] turns covariate models into plot-level treatment regimes.
//! [`harness`] runs all of it across a scenario grid.

pub mod design;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod policy;
pub mod population;
pub mod seed;
pub mod stats;

pub use design::{enroll_and_assign, DesignSpec, ObservedStudy, SamplesPerPlot};
pub use error::{Error, Result};
pub use estimators::{
    diff_in_diffs, diff_in_means, naive_moderator, ols_interaction, EstimateWithCI, OlsInteraction,
    OlsOptions, Sandwich,
};
pub use policy::{BudgetSolver, CostModel, PolicyRegime};
pub use population::{generate_population, Population, PopulationParams};
