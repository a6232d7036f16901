//! Run configuration, read from TOML. Every section is optional and falls
//! back to the defaults; unknown keys are errors.
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! out = "runs/baseline"
//!
//! [synth]
//! wells = 3
//! points_min = 200
//! points_max = 300
//!
//! [train.m]
//! epochs = 100
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vfm_core::estimation::{Optimizer, TrainConfig};
use vfm_core::model::{FractionMode, ModelKind, PriorConfig};
use vfm_core::physics::PhysicalConstants;
use vfm_core::pipeline::PipelineConfig;
use vfm_core::synth::{default_cv_points, SynthSpec};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Output tree root; `--out` takes precedence.
    pub out: Option<PathBuf>,
    /// Raw well files; defaults to `<out>/raw`.
    pub raw: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Valve test points of the M-model's Cv curve.
    pub cv_points: Vec<(f64, f64)>,
    pub fractions: FractionMode,
    pub priors: PriorConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            cv_points: default_cv_points(),
            fractions: FractionMode::default(),
            priors: PriorConfig::default(),
        }
    }
}

/// Per-kind deviations from the default hyperparameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverride {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub sigma_eps: Option<f64>,
    pub lambda_nn: Option<f64>,
    pub optimizer: Option<Optimizer>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub width: Option<usize>,
    pub depth: Option<usize>,
    pub snapshot_every: Option<usize>,
}

impl TrainOverride {
    pub fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(epochs, batch_size, learning_rate, lambda_nn, optimizer, adam_beta1, adam_beta2, adam_eps, width, depth, snapshot_every);
        if self.sigma_eps.is_some() {
            c.sigma_eps = self.sigma_eps;
        }
        c
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub m: TrainOverride,
    pub h: TrainOverride,
    pub dd: TrainOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Largest deviation [%] of the cumulative deviation tables.
    pub max_dev: u32,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection { max_dev: 50 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    /// Generator settings, including the true constants of the synthetic
    /// wells.
    pub synth: SynthSpec,
    pub pipeline: PipelineConfig,
    /// Constants assumed by the models and the mass-fraction computation.
    pub physics: PhysicalConstants,
    pub model: ModelSection,
    pub train: TrainSection,
    pub evaluation: EvaluationSection,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| AppError::Usage(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Hyperparameters for `kind`: the defaults of that kind with the
    /// configured overrides applied.
    pub fn train_config(&self, kind: ModelKind) -> TrainConfig {
        let over = match kind {
            ModelKind::M => &self.train.m,
            ModelKind::H => &self.train.h,
            ModelKind::DD => &self.train.dd,
        };
        over.apply(TrainConfig::for_kind(kind))
    }

    pub fn validate(&self) -> Result<()> {
        fn ctx(what: &str) -> impl Fn(vfm_core::Error) -> AppError + '_ {
            move |e| AppError::model(format!("config [{what}]"), e)
        }
        self.physics.validate().map_err(ctx("physics"))?;
        self.model.priors.validate().map_err(ctx("model.priors"))?;
        for kind in ModelKind::ALL {
            self.train_config(kind).validate(kind).map_err(ctx("train"))?;
        }
        Ok(())
    }
}
