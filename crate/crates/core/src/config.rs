//! Run configuration: every tunable knob of an experiment, in TOML.

use crate::clustering::DbscanConfig;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::metrics::Averaging;
use crate::synth::{PreprocessConfig, SceneScript};
use crate::uda::AdaptConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Built-in script names used when no script file is given.
    pub source_preset: String,
    pub target_preset: String,
    /// Scene script files; relative paths resolve against the config file.
    pub source_script: Option<PathBuf>,
    pub target_script: Option<PathBuf>,
    /// Pairs per domain used for training.
    pub train_pairs: usize,
    /// Held-out target pairs used for evaluation.
    pub test_pairs: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source_preset: "source".into(),
            target_preset: "target".into(),
            source_script: None,
            target_script: None,
            train_pairs: 8,
            test_pairs: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub pretrain_steps: usize,
    pub adapt_steps: usize,
    /// Held-out evaluation interval in steps (0 disables it).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_steps: 300,
            adapt_steps: 500,
            eval_every: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub averaging: Averaging,
}

/// Settings of the `ablate` sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub alphas: Vec<f64>,
    pub k_values: Vec<usize>,
    /// Scene used by the ground-removal comparison.
    pub gpr_preset: String,
    pub gpr_script: Option<PathBuf>,
    pub gpr_pairs: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            alphas: (0..10).map(|i| 0.990 + 0.001 * i as f64).collect(),
            k_values: vec![3, 6, 9, 12, 15, 18],
            gpr_preset: "slope".into(),
            gpr_script: None,
            gpr_pairs: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub estimator: EstimatorConfig,
    pub dbscan: DbscanConfig,
    pub adapt: AdaptConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
    pub ablation: AblationConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves script paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let scripts = [&mut cfg.data.source_script, &mut cfg.data.target_script, &mut cfg.ablation.gpr_script];
        for script in scripts.into_iter().flatten() {
            if script.is_relative() {
                *script = base.join(&*script);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.estimator.validate()?;
        self.dbscan.validate()?;
        self.adapt.validate()?;
        if self.data.train_pairs == 0 {
            return Err(Error::InvalidConfig("data.train_pairs must be >= 1".into()));
        }
        if self.ablation.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidConfig("ablation alphas must lie in [0, 1]".into()));
        }
        if self.ablation.k_values.contains(&0) {
            return Err(Error::InvalidConfig("ablation k_values must be >= 1".into()));
        }
        Ok(())
    }

    pub fn source_script(&self) -> Result<SceneScript> {
        resolve_script(&self.data.source_preset, self.data.source_script.as_deref())
    }

    pub fn target_script(&self) -> Result<SceneScript> {
        resolve_script(&self.data.target_preset, self.data.target_script.as_deref())
    }

    pub fn gpr_script(&self) -> Result<SceneScript> {
        resolve_script(&self.ablation.gpr_preset, self.ablation.gpr_script.as_deref())
    }
}

/// A script file when given, otherwise the named preset.
pub fn resolve_script(preset: &str, file: Option<&Path>) -> Result<SceneScript> {
    match file {
        Some(path) => SceneScript::from_toml(&std::fs::read_to_string(path)?),
        None => SceneScript::preset(preset),
    }
}
