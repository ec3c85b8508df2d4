//! Run configuration: JSON file merged over built-in defaults, then flag
//! overrides on top. The fully resolved config is written next to every
//! run's outputs so any artifact can be reproduced from its directory.

use std::path::{Path, PathBuf};

use sbom_cascade::cascade::{DEFAULT_MAX_CHAIN_LEN, DEFAULT_TOP_K};
use sbom_cascade::hgat::HgatConfig;
use sbom_cascade::predictor::MlpConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub sbom_dir: Option<PathBuf>,
    pub nvd_snapshots: Vec<PathBuf>,
    pub kev_list: Option<PathBuf>,
    pub chain_corpus: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Paths {
        Paths {
            sbom_dir: None,
            nvd_snapshots: Vec::new(),
            kev_list: None,
            chain_corpus: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
    pub strategy: String,
}

impl Default for SplitConfig {
    fn default() -> SplitConfig {
        SplitConfig {
            fractions: [0.7, 0.15, 0.15],
            strategy: "PAIR".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub hgat: HgatConfig,
    pub mlp: MlpConfig,
    pub split: SplitConfig,
    /// Negatives sampled per positive by the `pairs` subcommand.
    pub negative_ratio: f64,
    /// Link-probability threshold for chain composition.
    pub tau: f64,
    pub max_chain_len: usize,
    pub top_k: usize,
    /// Master seed for splits, negative sampling, and corpus synthesis.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            paths: Paths::default(),
            hgat: HgatConfig::default(),
            mlp: MlpConfig::default(),
            split: SplitConfig::default(),
            negative_ratio: 2.0,
            tau: 0.5,
            max_chain_len: DEFAULT_MAX_CHAIN_LEN,
            top_k: DEFAULT_TOP_K,
            seed: 7,
        }
    }
}

/// Loads a config file if given, layering it over defaults. Partial files
/// are fine: objects merge key-by-key, everything else replaces.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let defaults =
        serde_json::to_value(RunConfig::default()).expect("default config serializes");
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("failed to read config {}: {e}", path.display())))?;
    let file: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("malformed config {}: {e}", path.display())))?;
    let merged = merge(defaults, file);
    serde_json::from_value(merged)
        .map_err(|e| CliError::input(format!("invalid config {}: {e}", path.display())))
}

fn merge(base: serde_json::Value, over: serde_json::Value) -> serde_json::Value {
    match (base, over) {
        (serde_json::Value::Object(mut base), serde_json::Value::Object(over)) => {
            for (key, value) in over {
                let merged = match base.remove(&key) {
                    Some(existing) => merge(existing, value),
                    None => value,
                };
                base.insert(key, merged);
            }
            serde_json::Value::Object(base)
        }
        (_, over) => over,
    }
}

/// Writes the resolved configuration next to the run's outputs.
pub fn write_resolved(config: &RunConfig) -> Result<(), CliError> {
    let dir = &config.paths.output_dir;
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("failed to create {}: {e}", dir.display())))?;
    crate::pipeline::write_json(&dir.join("resolved_config.json"), config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_model_configs() {
        let config = RunConfig::default();
        assert_eq!(config.hgat, HgatConfig::default());
        assert_eq!(config.mlp, MlpConfig::default());
        assert_eq!(config.split.fractions, [0.7, 0.15, 0.15]);
        assert_eq!(config.negative_ratio, 2.0);
        assert_eq!(config.tau, 0.5);
        assert_eq!(config.max_chain_len, 4);
        assert_eq!(config.top_k, 20);
    }

    #[test]
    fn partial_file_overrides_only_named_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(
            &path,
            r#"{"tau": 0.8, "hgat": {"max_epochs": 5}, "paths": {"output_dir": "elsewhere"}}"#,
        )
        .unwrap();
        let config = load_config(Some(&path)).unwrap();
        assert_eq!(config.tau, 0.8);
        assert_eq!(config.hgat.max_epochs, 5);
        assert_eq!(config.hgat.hidden_dim, HgatConfig::default().hidden_dim);
        assert_eq!(config.paths.output_dir, PathBuf::from("elsewhere"));
        assert_eq!(config.mlp, MlpConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{"tua": 0.8}"#).unwrap();
        let err = load_config(Some(&path)).unwrap_err();
        assert!(err.to_string().contains("tua"));
    }

    #[test]
    fn missing_file_is_an_input_error() {
        assert!(load_config(Some(Path::new("/nonexistent/config.json"))).is_err());
    }
}
