use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vpgmm::private_forecast::MeanMode;
use vpgmm::Dims;

pub const DATA_DIR_ENV: &str = "VPGMM_DATA_DIR";
pub const MANIFEST: &str = "manifest.json";

/// Experiment settings, from `--config` TOML and then command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub farms: usize,
    pub periods: usize,
    pub obs: usize,
    pub components: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    /// Installed capacity per farm in MW; empty means 100 MW each.
    pub capacities: Vec<f64>,
    pub rho_t: f64,
    pub rho_s: f64,
    pub mean_mode: String,
    pub data_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            farms: 10,
            periods: 24,
            obs: 1000,
            components: 3,
            seed: 42,
            tol: 1e-8,
            max_iter: 500,
            capacities: Vec::new(),
            rho_t: 0.8,
            rho_s: 0.6,
            mean_mode: MeanMode::Exact.to_string(),
            data_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| crate::Usage(format!("{}: {e}", path.display())).into())
    }

    pub fn capacities(&self) -> Vec<f64> {
        if self.capacities.is_empty() {
            vec![100.0; self.farms]
        } else {
            self.capacities.clone()
        }
    }

    pub fn mean_mode(&self) -> Result<MeanMode> {
        Ok(self.mean_mode.parse()?)
    }

    /// `--data-dir`, then the config file, then `VPGMM_DATA_DIR`, then
    /// `./data`.
    pub fn data_dir(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.data_dir.clone())
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }
}

/// What `gen-data` produced, so later commands need no flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dims: Dims,
    pub seed: u64,
    pub capacities: Vec<f64>,
    pub rho_t: f64,
    pub rho_s: f64,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        let path = dir.join(MANIFEST);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| crate::Usage(format!("{}: {e}", path.display())).into())
    }
}
