//! TOML run configuration.
//!
//! Every key is optional and unknown keys are rejected. A grid preset
//! supplies the starting point and `[scenarios]`, `[population]`, `[design]`
//! and `[costs]` override individual fields. With `grid = "custom"` all five
//! scenario axes must be given.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sequest::design::SamplesPerPlot;
use sequest::estimators::Sandwich;
use sequest::harness::{ScenarioGrid, SimCosts};

pub const DEFAULT_SEED: u64 = 20_240_917;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GridPreset {
    #[default]
    Paper,
    Figure3,
    Custom,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOverrides {
    pub tau_values: Option<Vec<f64>>,
    pub beta_mod_values: Option<Vec<f64>>,
    pub sd_eps1_values: Option<Vec<f64>>,
    pub n_values: Option<Vec<usize>>,
    pub samples_per_plot_values: Option<Vec<SamplesPerPlot>>,
    pub n_replicates: Option<usize>,
    pub alpha: Option<f64>,
    pub sandwich: Option<Sandwich>,
    pub max_failure_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationOverrides {
    pub mu_b: Option<f64>,
    pub sd_b_across: Option<f64>,
    pub mean_control_change: Option<f64>,
    pub sd_control_change: Option<f64>,
    pub n_plots: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignOverrides {
    pub sd_within_plot: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub grid: Option<GridPreset>,
    #[serde(default)]
    pub scenarios: ScenarioOverrides,
    #[serde(default)]
    pub population: PopulationOverrides,
    #[serde(default)]
    pub design: DesignOverrides,
    pub costs: Option<SimCosts>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("custom grid needs `scenarios.{0}`")]
    MissingAxis(&'static str),
}

impl RunConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_string(),
            source,
        })
    }

    /// Resolves presets and overrides into a grid.
    pub fn resolve(&self, preset: GridPreset, seed: u64) -> Result<ScenarioGrid, ConfigError> {
        let s = &self.scenarios;
        let mut grid = match preset {
            GridPreset::Figure3 => ScenarioGrid::power_grid(seed),
            GridPreset::Paper | GridPreset::Custom => ScenarioGrid::standard(seed),
        };
        if preset == GridPreset::Custom {
            let axes = [
                ("tau_values", s.tau_values.is_none()),
                ("beta_mod_values", s.beta_mod_values.is_none()),
                ("sd_eps1_values", s.sd_eps1_values.is_none()),
                ("n_values", s.n_values.is_none()),
                ("samples_per_plot_values", s.samples_per_plot_values.is_none()),
            ];
            if let Some((name, _)) = axes.iter().find(|(_, missing)| *missing) {
                return Err(ConfigError::MissingAxis(name));
            }
        }
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = &$src {
                    $dst = v.clone();
                }
            };
        }
        set!(s.tau_values => grid.tau_values);
        set!(s.beta_mod_values => grid.beta_mod_values);
        set!(s.sd_eps1_values => grid.sd_eps1_values);
        set!(s.n_values => grid.n_values);
        set!(s.samples_per_plot_values => grid.samples_per_plot_values);
        set!(s.n_replicates => grid.n_replicates);
        set!(s.alpha => grid.alpha);
        set!(s.sandwich => grid.sandwich);
        set!(s.max_failure_rate => grid.max_failure_rate);
        let p = &self.population;
        set!(p.mu_b => grid.base_params.mu_b);
        set!(p.sd_b_across => grid.base_params.sd_b_across);
        set!(p.mean_control_change => grid.base_params.mean_control_change);
        set!(p.sd_control_change => grid.base_params.sd_control_change);
        set!(p.n_plots => grid.base_params.n_plots);
        set!(self.design.sd_within_plot => grid.sd_within_plot);
        grid.costs = self.costs.clone();
        Ok(grid)
    }
}

/// A fully explicit config that reproduces `grid` when run again.
pub fn echo(grid: &ScenarioGrid, out: PathBuf) -> RunConfig {
    let p = grid.base_params;
    RunConfig {
        seed: Some(grid.master_seed),
        out: Some(out),
        grid: Some(GridPreset::Custom),
        scenarios: ScenarioOverrides {
            tau_values: Some(grid.tau_values.clone()),
            beta_mod_values: Some(grid.beta_mod_values.clone()),
            sd_eps1_values: Some(grid.sd_eps1_values.clone()),
            n_values: Some(grid.n_values.clone()),
            samples_per_plot_values: Some(grid.samples_per_plot_values.clone()),
            n_replicates: Some(grid.n_replicates),
            alpha: Some(grid.alpha),
            sandwich: Some(grid.sandwich),
            max_failure_rate: Some(grid.max_failure_rate),
        },
        population: PopulationOverrides {
            mu_b: Some(p.mu_b),
            sd_b_across: Some(p.sd_b_across),
            mean_control_change: Some(p.mean_control_change),
            sd_control_change: Some(p.sd_control_change),
            n_plots: Some(p.n_plots),
        },
        design: DesignOverrides {
            sd_within_plot: Some(grid.sd_within_plot),
        },
        costs: grid.costs.clone(),
    }
}

/// SHA-256 of the grid's canonical JSON, hex encoded.
pub fn grid_hash(grid: &ScenarioGrid) -> String {
    let json = serde_json::to_vec(grid).expect("grid serializes");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
