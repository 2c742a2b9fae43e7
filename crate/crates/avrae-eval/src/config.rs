//! TOML configuration: backend endpoint and decoding parameters, dataset
//! cleaning rules, and prompt assembly options. Every key has a default, so
//! running without a config file works.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::dataset::LoadOptions;
use crate::inference::BackendConfig;
use crate::prompts::PromptOptions;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub backend: BackendConfig,
    pub dataset: LoadOptions,
    pub prompts: PromptOptions,
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<HarnessConfig> {
    let Some(path) = path else {
        return Ok(HarnessConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("cannot parse config file {}", path.display()))
}
