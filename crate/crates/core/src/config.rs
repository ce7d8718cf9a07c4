//! TOML run configuration: `[model]`, `[train]`, and `[solver]` sections,
//! each falling back to defaults when omitted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{MarkSpace, ModelConfig};
use crate::error::{Error, Result};
use crate::ode::SolverConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppConfig {
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub solver: SolverConfig<f64>,
}

fn default_model() -> ModelConfig {
    ModelConfig {
        n_internal: 3,
        n_memory: 2,
        hidden_flow: vec![20],
        hidden_decay: vec![20],
        hidden_jump: vec![20],
        hidden_intensity: vec![20],
        mark_space: MarkSpace::Discrete { num_types: 1 },
    }
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            model: default_model(),
            train: TrainConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn validate(&self) -> Result<()> {
        crate::dynamics::Model::<f64>::new(self.model.clone())?;
        self.train.validate()?;
        if self.solver.rtol <= 0.0 || self.solver.atol <= 0.0 {
            return Err(Error::Schema("solver tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: AppConfig = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))
    }
}
