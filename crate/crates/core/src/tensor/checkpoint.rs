//! JSON checkpoints for trained models.
//!
//! A checkpoint stores the full parameter set, the feature normalization
//! statistics computed on the training split, the model configuration, and
//! the RNG seed that produced the run. Loading validates the format version,
//! the model kind, and every parameter shape before touching the store.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ParamStore;

pub const CHECKPOINT_FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {found:?}")]
    FormatVersion { found: String },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    ModelKind { expected: String, found: String },
    #[error("checkpoint is missing parameter {name:?}")]
    MissingParam { name: String },
    #[error("checkpoint has unexpected parameter {name:?}")]
    UnexpectedParam { name: String },
    #[error("parameter {name:?} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter {name:?} holds non-finite values")]
    NonFinite { name: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Per-feature-table z-score statistics. `columns` lists the feature columns
/// that were standardized; `mean` and `std` run parallel to it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NormBlock {
    pub columns: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormBlock {
    /// Applies the stored statistics to one row-major feature matrix.
    /// Columns with zero variance were recorded with `std == 0` and pass
    /// through unscaled.
    pub fn apply(&self, features: &mut [f64], width: usize) {
        for (k, &col) in self.columns.iter().enumerate() {
            if self.std[k] == 0.0 {
                continue;
            }
            let mut i = col;
            while i < features.len() {
                features[i] = (features[i] - self.mean[k]) / self.std[k];
                i += width;
            }
        }
    }

    /// Fits statistics over the given columns of a row-major matrix.
    pub fn fit(features: &[f64], width: usize, columns: &[usize]) -> NormBlock {
        let rows = if width == 0 { 0 } else { features.len() / width };
        let mut mean = Vec::with_capacity(columns.len());
        let mut std = Vec::with_capacity(columns.len());
        for &col in columns {
            let mut sum = 0.0;
            for r in 0..rows {
                sum += features[r * width + col];
            }
            let mu = if rows == 0 { 0.0 } else { sum / rows as f64 };
            let mut var = 0.0;
            for r in 0..rows {
                let d = features[r * width + col] - mu;
                var += d * d;
            }
            let sigma = if rows == 0 {
                0.0
            } else {
                (var / rows as f64).sqrt()
            };
            mean.push(mu);
            std.push(sigma);
        }
        NormBlock {
            columns: columns.to_vec(),
            mean,
            std,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: String,
    pub model_kind: String,
    pub config: serde_json::Value,
    pub params: BTreeMap<String, ParamRecord>,
    pub norm_stats: BTreeMap<String, NormBlock>,
    pub rng_seed: u64,
}

impl ModelCheckpoint {
    pub fn from_store(
        model_kind: &str,
        config: serde_json::Value,
        store: &ParamStore,
        norm_stats: BTreeMap<String, NormBlock>,
        rng_seed: u64,
    ) -> Self {
        let mut params = BTreeMap::new();
        for name in store.names() {
            params.insert(
                name.to_string(),
                ParamRecord {
                    shape: store.shape(name).unwrap().to_vec(),
                    values: store.values(name).unwrap().to_vec(),
                },
            );
        }
        ModelCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION.to_string(),
            model_kind: model_kind.to_string(),
            config,
            params,
            norm_stats,
            rng_seed,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let data = fs::read_to_string(path)?;
        let ckpt: ModelCheckpoint = serde_json::from_str(&data)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::FormatVersion {
                found: ckpt.format_version,
            });
        }
        for (name, record) in &ckpt.params {
            if record.values.len() != record.shape.iter().product::<usize>()
                || !record.values.iter().all(|v| v.is_finite())
            {
                return Err(CheckpointError::NonFinite { name: name.clone() });
            }
        }
        Ok(ckpt)
    }

    pub fn expect_kind(&self, expected: &str) -> Result<(), CheckpointError> {
        if self.model_kind == expected {
            Ok(())
        } else {
            Err(CheckpointError::ModelKind {
                expected: expected.to_string(),
                found: self.model_kind.clone(),
            })
        }
    }
}

impl ParamStore {
    /// Overwrites every parameter in this store from the checkpoint. The
    /// name sets must match exactly and shapes must agree; optimizer state
    /// is not restored.
    pub fn load_checkpoint(&mut self, ckpt: &ModelCheckpoint) -> Result<(), CheckpointError> {
        for name in ckpt.params.keys() {
            if self.get(name).is_none() {
                return Err(CheckpointError::UnexpectedParam { name: name.clone() });
            }
        }
        let names: Vec<String> = self.names().map(str::to_string).collect();
        for name in names {
            let record = ckpt
                .params
                .get(&name)
                .ok_or_else(|| CheckpointError::MissingParam { name: name.clone() })?;
            let expected = self.shape(&name).unwrap().to_vec();
            if record.shape != expected {
                return Err(CheckpointError::ParamShape {
                    name,
                    expected,
                    found: record.shape.clone(),
                });
            }
            self.set_values(&name, record.values.clone())
                .map_err(|_| CheckpointError::NonFinite { name })?;
        }
        Ok(())
    }
}
