//! Whole-run configuration: benchmark, network and training knobs in one
//! TOML document, with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::BenchmarkConfig;
use crate::segnet::{hex_sha256, SegNetConfig};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("override `{0}` must look like key.path=value")]
    Override(String),
    #[error("override `{key}`: `{prefix}` is not a table")]
    NotATable { key: String, prefix: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Drives splits, initialization and batch sampling.
    pub seed: u64,
    /// Labeled target scenes; 0 is unsupervised adaptation.
    pub n_labeled: usize,
    /// Share of 10×10 blocks annotated in each labeled target scene.
    pub annotation_fraction: f64,
    /// Load `source/`, `target/` and `val/` from here instead of generating.
    pub data_dir: Option<PathBuf>,
    pub data: BenchmarkConfig,
    pub net: SegNetConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            n_labeled: 5,
            annotation_fraction: 1.0,
            data_dir: None,
            data: BenchmarkConfig::default(),
            net: SegNetConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, origin, &[])
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_with(&text, &path.display().to_string(), overrides)
    }

    /// Parse `text`, apply `key.path=value` overrides, then deserialize
    /// (rejecting unknown keys).
    pub fn from_toml_with(text: &str, origin: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse {
                origin: origin.to_string(),
                message: e.to_string(),
            })
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        Self::from_toml_with(&self.to_toml(), "<config>", overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn hash(&self) -> String {
        hex_sha256(&self.to_toml())
    }

    /// Write the resolved config as `config.toml` under `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf, ConfigError> {
        let path = dir.join("config.toml");
        let io = |source| ConfigError::Io {
            path: path.clone(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(&path, self.to_toml()).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

/// Set a dotted key. The value is parsed as a TOML value, falling back to a
/// bare string (so `train.pairing.strategy=exact` works unquoted).
pub fn apply_override(table: &mut toml::Table, entry: &str) -> Result<(), ConfigError> {
    let (key, raw) = entry
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(entry.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(entry.to_string()));
    }
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    let (last, prefix) = parts.split_last().expect("non-empty key");
    let mut cur = table;
    for (i, p) in prefix.iter().enumerate() {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::NotATable {
            key: key.to_string(),
            prefix: parts[..=i].join("."),
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
