//! Run configuration: one JSON document drives every pipeline stage.

use serde::{Deserialize, Serialize};

use traj_core::analysis::Plane;
use traj_core::lstm::{NetworkConfig, TrainingConfig};
use traj_core::model::{BlochState, PhysicalParams, TomoAxis};
use traj_core::sim::{SimRegime, TrajOptions};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub params: PhysicalParams,
    pub regime: SimRegime,
    /// Drive durations (s); records are padded to the longest.
    pub t_m_grid: Vec<f64>,
    pub axes: Vec<TomoAxis>,
    pub init_state: BlochState,
    #[serde(default)]
    pub options: TrajOptions,
    #[serde(default = "default_true")]
    pub retain_truth: bool,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "default_grid")]
    pub grid: GridConfig,
    /// Window length (s) for time-resolved analysis; 0 disables it.
    #[serde(default)]
    pub window: f64,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridConfig {
    pub plane: Plane,
    pub n_bins: usize,
    pub min_samples: usize,
}

fn default_grid() -> GridConfig {
    GridConfig {
        plane: Plane::Yz,
        n_bins: 20,
        min_samples: 50,
    }
}

impl RunConfig {
    #[cfg_attr(not(test), allow(dead_code))]
    pub fn example() -> Self {
        let params = PhysicalParams::device_defaults()
            .with_two_omega_over_kappa(0.6)
            .with_dt(20e-9);
        let dt = params.dt;
        Self {
            schema_version: 1,
            params,
            regime: SimRegime::new(traj_core::model::RegimeKind::MemoryKernel, 7, 200),
            t_m_grid: (1..=40).map(|k| k as f64 * 5.0 * dt).collect(),
            axes: vec![TomoAxis::X, TomoAxis::Y, TomoAxis::Z],
            init_state: BlochState::plus_z(),
            options: TrajOptions::default(),
            retain_truth: true,
            network: NetworkConfig::default(),
            training: TrainingConfig::default(),
            grid: default_grid(),
            window: 0.2e-6,
        }
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("cannot parse config {}: {e}", path.display()))?;
        if cfg.schema_version != 1 {
            anyhow::bail!("unsupported config schema_version {}", cfg.schema_version);
        }
        cfg.params.validate()?;
        Ok(cfg)
    }

    pub fn canonical_hash(&self) -> anyhow::Result<u64> {
        let text = serde_json::to_string(self)?;
        Ok(traj_core::io::fnv1a64(text.as_bytes()))
    }
}
