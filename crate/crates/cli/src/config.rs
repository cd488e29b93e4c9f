//! TOML run configuration: `[scenario]`, `[observer]`, `[output]`, `[sweep]`.

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use vslam_core::observer::ObserverConfig;
use vslam_core::simulation::ScenarioConfig;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    /// Per-step slack for the storage monotonicity report in the summary.
    pub monotonicity_slack: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub samples: usize,
    pub gains: Vec<f64>,
    pub seed: u64,
    pub chi_margin: f64,
    pub max_bearing_angle: f64,
    pub range_ratio_low: f64,
    pub range_ratio_high: f64,
    /// Final bearing-error bound classifying a run as converged.
    pub bearing_tol: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            samples: 200,
            gains: vec![1.0, 5.0, 25.0],
            seed: 0xba51,
            chi_margin: 0.05,
            max_bearing_angle: 0.35,
            range_ratio_low: 0.5,
            range_ratio_high: 2.0,
            bearing_tol: 0.01,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub observer: ObserverConfig,
    pub output: OutputConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: vslam_core::simulation::scenario_circle(),
            observer: ObserverConfig::simulation(),
            output: OutputConfig {
                monotonicity_slack: 1e-8,
            },
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(CliError::usage)?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::usage(anyhow!("parsing {}: {e}", path.display())))?;
        cfg.scenario
            .validate()
            .map_err(|e| CliError::usage(anyhow!("config {}: {e}", path.display())))?;
        cfg.observer
            .validate()
            .map_err(|e| CliError::usage(anyhow!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }
}
