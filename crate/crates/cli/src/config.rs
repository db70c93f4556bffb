//! Experiment configuration file (TOML) with `[model]`, `[train]` and
//! `[paths]` sections; command-line flags override file values.

use std::fs;
use std::path::{Path, PathBuf};

use regdgcnn_core::model::RegDgcnnConfig;
use regdgcnn_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub stl_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: RegDgcnnConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}
