//! Configuration files and the merge order defaults < file < flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ttd_core::{ModelConfig, TrainConfig};

use crate::error::{usage, CliResult};

/// Contents of a training config file (`[model]` and `[train]` tables).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

pub fn to_toml<T: Serialize>(value: &T) -> CliResult<String> {
    toml::to_string_pretty(value).map_err(|e| crate::error::CliError::Runtime(format!("cannot encode config: {e}")))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AxesFile {
    pub omega_e: Option<Vec<f64>>,
    pub omega_w: Option<Vec<f64>>,
    pub thresholds: Option<Vec<f64>>,
}
