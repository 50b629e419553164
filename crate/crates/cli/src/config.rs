use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tpbs::scaler::DEFAULT_SCALER_EPS;
use tpbs::{DensityFitConfig, Estimator, ModelSpec, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoint {
    BestVal,
    AfterOverfit,
}

impl Checkpoint {
    pub fn file_name(self) -> &'static str {
        match self {
            Checkpoint::BestVal => "best_val.tpbs",
            Checkpoint::AfterOverfit => "after_overfit.tpbs",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Checkpoint::BestVal => "best_val",
            Checkpoint::AfterOverfit => "after_overfit",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub checkpoints: Vec<Checkpoint>,
    pub estimators: Vec<Estimator>,
    pub num_missing: Vec<usize>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            checkpoints: vec![Checkpoint::BestVal, Checkpoint::AfterOverfit],
            estimators: Estimator::ALL.to_vec(),
            num_missing: vec![0, 2, 3, 4],
        }
    }
}

/// One experiment: a dataset manifest plus model, training, density and
/// evaluation settings. The root `seed` drives every random choice; the
/// seeds inside `[train]` and `[density]` are overwritten per split.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub scaler_eps: f64,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub density: DensityFitConfig,
    #[serde(default)]
    pub eval: EvalSpec,
}

fn default_eps() -> f64 {
    DEFAULT_SCALER_EPS
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if cfg.manifest.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.manifest = dir.join(&cfg.manifest);
            }
        }
        Ok(cfg)
    }

    pub fn train_seed(&self, split: usize) -> u64 {
        self.seed.wrapping_add(split as u64)
    }

    pub fn mask_seed(&self, split: usize, num_missing: usize) -> u64 {
        self.seed
            .wrapping_mul(1_000_003)
            .wrapping_add(1000 * split as u64 + num_missing as u64)
    }
}
