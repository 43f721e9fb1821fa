use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use spatial_qa::datagen::DatasetConfig;
use spatial_qa::geo::CatalogConfig;
use spatial_qa::joint::JointConfig;
use spatial_qa::spatial::SpNetConfig;
use spatial_qa::train::TrainConfig;

use crate::Usage;

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Every tunable setting. A config file may give any subset of sections and
/// fields; flags then override individual values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub catalog: CatalogConfig,
    pub data: DatasetConfig,
    pub spatial: SpNetConfig,
    pub joint: JointConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| Usage(format!("config file {}: {e}", path.display())).into())
    }
}

/// Sections of [`RunConfig`] that influence each command's output.
fn sections(command: &str) -> &'static [&'static str] {
    match command {
        "gen-catalog" => &["catalog"],
        "gen-data" => &["data"],
        "train" => &["spatial", "joint", "train"],
        _ => &[],
    }
}

/// Provenance block written into every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Run<'a> {
    pub tool_version: &'static str,
    pub command: &'a str,
    pub inputs: serde_json::Value,
    pub config: serde_json::Value,
}

impl<'a> Run<'a> {
    pub fn new(command: &'a str, inputs: serde_json::Value, config: &RunConfig) -> Self {
        let full = serde_json::to_value(config).expect("run config serializes");
        let config = sections(command)
            .iter()
            .map(|k| (k.to_string(), full[*k].clone()))
            .collect::<serde_json::Map<_, _>>()
            .into();
        Run {
            tool_version: TOOL_VERSION,
            command,
            inputs,
            config,
        }
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    /// Writes the provenance next to a line-oriented artifact as `<path>.run.json`.
    pub fn write_sidecar(&self, artifact: &Path) -> anyhow::Result<PathBuf> {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".run.json");
        let path = PathBuf::from(name);
        write_json(&path, &self.to_value())?;
        Ok(path)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
