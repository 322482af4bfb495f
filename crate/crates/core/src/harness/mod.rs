//! Monte Carlo harness: runs every estimator and policy learner over a grid
//! of populations and study designs and summarizes their performance.

mod grid;
mod run;
mod tables;

pub use grid::*;
pub use run::*;
pub use tables::*;

use crate::error::Result;

/// Runs `grid` and tabulates rejection rates of the PATE estimators.
pub fn power_curves(grid: &ScenarioGrid) -> Result<Vec<PowerRow>> {
    let result = run_grid(grid)?;
    Ok(power_table(&result, grid.base_params.mu_b))
}

/// Runs `grid` and tabulates bias and coverage of the moderator estimators.
pub fn attenuation_curves(grid: &ScenarioGrid) -> Result<Vec<AttenuationRow>> {
    Ok(attenuation_table(&run_grid(grid)?))
}
