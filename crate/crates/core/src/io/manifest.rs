use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One file of a run's output, with the seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub file: String,
    pub seed: u64,
    pub split: String,
    pub first_points: usize,
    pub second_points: usize,
}

/// Everything needed to reproduce a run: the command, the resolved
/// configuration and scene scripts, and the produced files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(default)]
    pub scripts: serde_json::Value,
    #[serde(default)]
    pub pairs: Vec<PairEntry>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            tool: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            seed,
            config: serde_json::to_value(config).map_err(|e| Error::Format(e.to_string()))?,
            scripts: serde_json::Value::Null,
            pairs: Vec::new(),
            outputs: Vec::new(),
        })
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    Ok(std::fs::write(path, text)?)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Format(e.to_string()))
}
