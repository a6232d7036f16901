//! Versioned, self-describing model files (JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};
use vfm_core::estimation::TrainConfig;
use vfm_core::model::{HybridityReport, ModelAssembly};

use crate::error::{AppError, Result};

pub const FORMAT: &str = "vfm-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub format: String,
    pub version: u32,
    pub well_id: String,
    pub train_config: TrainConfig,
    pub epochs_run: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_rmse: Option<f64>,
    pub overfit_flag: bool,
    pub bound_violations: Vec<(String, f64)>,
    pub hybridity: HybridityReport,
    pub model: ModelAssembly,
}

impl ModelArtifact {
    pub fn new(well_id: &str, train_config: TrainConfig, model: ModelAssembly) -> Self {
        ModelArtifact {
            format: FORMAT.into(),
            version: VERSION,
            well_id: well_id.into(),
            train_config,
            epochs_run: 0,
            final_train_loss: None,
            final_val_rmse: None,
            overfit_flag: false,
            bound_violations: model.bound_violations(),
            hybridity: model.hybridity(),
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| AppError::format("<artifact>", e))?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let mut a: ModelArtifact = serde_json::from_str(&text).map_err(|e| AppError::format(path, e))?;
        if a.format != FORMAT || a.version != VERSION {
            return Err(AppError::format(
                path,
                format!("unsupported artifact {} v{} (expected {FORMAT} v{VERSION})", a.format, a.version),
            ));
        }
        a.model.refresh().map_err(|e| AppError::format(path, e))?;
        Ok(a)
    }
}
