use std::path::Path;

use anyhow::Result;
use kai_core::data::SynthConfig;
use kai_core::evaluate::AccMode;
use kai_core::metrics::Region;
use kai_core::model::ModelConfig;
use kai_core::training::TrainConfig;
use kai_core::Error;
use serde::{Deserialize, Serialize};

/// Named starting points for the model section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Preset {
    /// Depths [3, 3, 15, 3], dims [48, 96, 192, 288].
    #[default]
    Paper,
    /// Depths [1, 1, 2, 1], dims [8, 16, 32, 48].
    Desk,
}

/// Everything a `--config` file may set. Every section and field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::paper(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub acc_mode: AccMode,
    pub region: Option<Region>,
}

impl RunConfig {
    /// Defaults, then the preset, then the file (whose fields win).
    pub fn load(path: Option<&Path>, preset: Preset) -> Result<Self> {
        let mut base = serde_json::to_value(Self::default())?;
        if preset == Preset::Desk {
            let desk = ModelConfig::desk(5, 8, 16);
            base["model"]["depths"] = serde_json::to_value(desk.depths)?;
            base["model"]["dims"] = serde_json::to_value(desk.dims)?;
        }
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let file: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut base, file);
        }
        serde_json::from_value(base)
            .map_err(|e| Error::Config(format!("configuration: {e}")).into())
    }
}

/// Recursive object merge; non-object values in `patch` replace those in `base`.
fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
