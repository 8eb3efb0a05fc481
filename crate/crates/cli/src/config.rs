//! Experiment configuration: one JSON file describing the workload, the
//! downloading-time law, the simulator settings, and the sweep.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use redshard_core::distributions::DistSpec;
use redshard_core::policies::PolicySpec;
use redshard_core::workload::{IntensityVariant, WorkloadSpec};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn default_max_events() -> u64 {
    50_000_000
}

fn default_resample() -> bool {
    true
}

fn default_intensity() -> IntensityVariant {
    IntensityVariant::ChunkRate
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSection {
    pub l_threads: usize,
    /// Policy for single `run` invocations; sweeps use `sweep.policies`.
    #[serde(default)]
    pub policy: Option<PolicySpec>,
    #[serde(default)]
    pub record_snapshots: bool,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSection {
    pub rho_grid: Vec<f64>,
    pub policies: Vec<PolicySpec>,
    #[serde(default = "default_intensity")]
    pub intensity: IntensityVariant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub workload: WorkloadSpec,
    pub dist: DistSpec,
    pub sim: SimSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    pub reps: usize,
    #[serde(default = "default_resample")]
    pub resample_arrivals: bool,
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.workload
            .validate()
            .map_err(|e| ConfigError(format!("workload: {e}")))?;
        self.dist
            .to_dist()
            .map_err(|e| ConfigError(format!("dist: {e}")))?;
        if self.sim.l_threads < 1 {
            return Err(ConfigError("sim.l_threads must be >= 1".into()));
        }
        if self.sim.max_events == 0 {
            return Err(ConfigError("sim.max_events must be > 0".into()));
        }
        if self.reps < 2 {
            return Err(ConfigError("reps must be >= 2".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.rho_grid.is_empty() {
                return Err(ConfigError("sweep.rho_grid must not be empty".into()));
            }
            for pair in sweep.rho_grid.windows(2) {
                if pair[1] <= pair[0] {
                    return Err(ConfigError(
                        "sweep.rho_grid must be strictly increasing".into(),
                    ));
                }
            }
            if sweep
                .rho_grid
                .iter()
                .any(|&r| !(r > 0.0 && r < 1.0))
            {
                return Err(ConfigError(
                    "sweep.rho_grid values must lie in (0, 1)".into(),
                ));
            }
            if sweep.policies.is_empty() {
                return Err(ConfigError("sweep.policies must not be empty".into()));
            }
        }
        Ok(())
    }
}
