use std::path::{Path, PathBuf};

use ieq_core::models::{ModelFamily, ModelSpec};
use ieq_core::pipeline::PipelineConfig;
use ieq_core::synthdata::SynthConfig;
use ieq_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable supplying the work directory when neither the command
/// line nor the config file names one.
pub const WORKDIR_ENV: &str = "IEQ_WORKDIR";
pub const DEFAULT_WORKDIR: &str = "ieq-work";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw sensor CSV. When absent, `prepare` generates data from `[synth]`.
    pub input: Option<PathBuf>,
    pub work_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Predict test chunks on the rayon pool (results are identical).
    pub parallel: bool,
    /// Skip the per-sample truth/prediction CSV.
    pub no_export: bool,
}

/// Everything one run needs; every key has a default, so an empty file is a
/// valid configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
    pub model: ModelSpec,
    pub training: TrainConfig,
    pub evaluation: EvaluationSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Checks value ranges and that referenced input files exist.
    pub fn validate(&self) -> Result<(), CliError> {
        let stage = |e: ieq_core::Error| CliError::config(format!("config: {e}"));
        self.synth.validate().map_err(stage)?;
        self.pipeline.validate().map_err(stage)?;
        self.model.validate().map_err(stage)?;
        self.training.validate().map_err(stage)?;
        if let Some(input) = &self.paths.input {
            if !input.is_file() {
                return Err(CliError::config(format!("config: input {} does not exist", input.display())));
            }
        }
        Ok(())
    }

    /// Flag, then config, then `$IEQ_WORKDIR`, then `./ieq-work`.
    pub fn work_dir(&self) -> PathBuf {
        self.paths
            .work_dir
            .clone()
            .or_else(|| std::env::var_os(WORKDIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_WORKDIR))
    }

    pub fn spec_for(&self, family: ModelFamily) -> ModelSpec {
        ModelSpec { family, ..self.model }
    }
}

/// Values given on the command line; `None` keeps the config value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub work_dir: Option<PathBuf>,
    pub family: Option<ModelFamily>,
    pub model_seed: Option<u64>,
    pub shuffle_seed: Option<u64>,
    pub max_epochs: Option<usize>,
    pub initial_lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub parallel: bool,
    pub no_export: bool,
    pub synth_days: Option<usize>,
    pub synth_seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = &self.input {
            cfg.paths.input = Some(v.clone());
        }
        if let Some(v) = &self.work_dir {
            cfg.paths.work_dir = Some(v.clone());
        }
        if let Some(v) = self.family {
            cfg.model.family = v;
        }
        if let Some(v) = self.model_seed {
            cfg.model.seed = v;
        }
        if let Some(v) = self.shuffle_seed {
            cfg.training.shuffle_seed = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.training.max_epochs = v;
        }
        if let Some(v) = self.initial_lr {
            cfg.training.initial_lr = v;
            cfg.training.min_lr = cfg.training.min_lr.min(v);
        }
        if let Some(v) = self.batch_size {
            cfg.training.batch_size = v;
        }
        if let Some(v) = self.synth_days {
            cfg.synth.days = v;
        }
        if let Some(v) = self.synth_seed {
            cfg.synth.seed = v;
        }
        cfg.evaluation.parallel |= self.parallel;
        cfg.evaluation.no_export |= self.no_export;
    }
}
