//! Run configuration: a TOML file with `[model]`, `[train]` and `[data]`
//! sections, layered over a preset and then over command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use relmention::model::ModelConfig;
use relmention::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Directory holding the DocRED-layout splits.
    pub dir: Option<PathBuf>,
    /// MEMB1 mention vectors; switches the encoder to precomputed mode.
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    preset: Option<String>,
    model: Option<toml::Table>,
    train: Option<toml::Table>,
    data: Option<DataSection>,
}

/// Everything a training run needs, after all layers are applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub preset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSection,
}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn preset(name: &str) -> Result<TrainConfig> {
    TrainConfig::preset(name).ok_or_else(|| usage(format!("unknown preset {name:?} (expected docred or dwie)")))
}

/// `base` with the keys of `over` replaced; unknown keys name the field.
fn layered<T: Serialize + DeserializeOwned>(base: &T, over: Option<toml::Table>, section: &str) -> Result<T> {
    let mut table = toml::Table::try_from(base).with_context(|| format!("serializing [{section}] defaults"))?;
    if let Some(over) = over {
        table.extend(over);
    }
    T::deserialize(toml::Value::Table(table)).map_err(|e| usage(format!("invalid [{section}] section: {e}")))
}

impl RunConfig {
    pub fn load(path: Option<&Path>, preset_flag: Option<&str>) -> Result<Self> {
        let file: FileConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let preset_name = preset_flag
            .map(str::to_string)
            .or(file.preset)
            .unwrap_or_else(|| "docred".into());
        let train = layered(&preset(&preset_name)?, file.train, "train")?;
        let model = layered(&ModelConfig::default(), file.model, "model")?;
        Ok(Self {
            preset: preset_name,
            model,
            train,
            data: file.data.unwrap_or_default(),
        })
    }

    /// Rejects values the library would refuse, as usage errors.
    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| usage(e.to_string()))?;
        self.train.validate().map_err(|e| usage(e.to_string()))
    }
}
