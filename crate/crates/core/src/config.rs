//! TOML run configuration.
//!
//! Precedence is flag > file > built-in default: the file fills a
//! [`RunConfig`] starting from defaults, and the CLI then overlays any
//! explicitly passed flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelDims,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()
    }
}

/// Reads a TOML file into a [`RunConfig`]; absent keys keep defaults,
/// unknown keys are an error naming the key.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(format!(
        "{}: {e}",
        path.display()
    )))?;
    cfg.validate()?;
    Ok(cfg)
}
