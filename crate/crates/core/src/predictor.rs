//! Co-exploitation predictor: 22-dimensional CVE-pair features and the
//! 22-64-32-16-1 MLP that scores them.
//!
//! Each pair vector holds two per-CVE blocks (canonical order) of
//! [cvss, severity one-hot ×4, year_norm, exploited, ref_norm, cwe_count]
//! plus four interaction features [|Δcvss|, cvss product, |Δyear|,
//! both_exploited]. Missing CVEs are imputed as all-defaults, so feature
//! building is total; a coverage report flags pairs with no metadata at all.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{canonical_pair, PairExample};
use crate::metrics::{roc_auc, MetricsError};
use crate::nvd::{CveMeta, MetaStore};
use crate::tensor::{
    gradient_check, AdamConfig, CheckpointError, GradCheckReport, ModelCheckpoint, NormBlock,
    ParamStore, Tensor, TensorError,
};

pub const PAIR_DIM: usize = 22;
pub const MLP_WIDTHS: [usize; 5] = [22, 64, 32, 16, 1];

/// Pair-feature columns that get z-scored; one-hot and boolean columns are
/// exempt.
pub const PAIR_Z_COLUMNS: [usize; 11] = [0, 5, 7, 8, 9, 14, 16, 17, 18, 19, 20];

pub const MODEL_KIND_MLP: &str = "MLP";

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error(
        "validation split has a single class; ROC-AUC is undefined — adjust the split \
         strategy, fractions, or seed so validation contains both labels"
    )]
    SingleClassValidation,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl From<CheckpointError> for PredictorError {
    fn from(e: CheckpointError) -> Self {
        PredictorError::IncompatibleCheckpoint(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub negative_ratio: f64,
}

impl Default for MlpConfig {
    fn default() -> MlpConfig {
        MlpConfig {
            dropout: 0.3,
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            seed: 7,
            negative_ratio: 2.0,
        }
    }
}

fn per_cve_block(meta: &CveMeta) -> [f64; 9] {
    let hot = meta.severity.one_hot();
    let year_norm = ((meta.published_year as f64 - 2000.0) / 30.0).clamp(0.0, 1.0);
    let ref_norm = (meta.reference_count.min(100)) as f64 / 100.0;
    [
        meta.cvss_base,
        hot[0],
        hot[1],
        hot[2],
        hot[3],
        year_norm,
        if meta.exploited { 1.0 } else { 0.0 },
        ref_norm,
        meta.cwe_count() as f64,
    ]
}

/// Builds the 22-dimensional feature vector for a CVE pair. The inputs are
/// canonicalized first, so argument order never matters.
pub fn build_pair_features(cve_a: &str, cve_b: &str, store: &MetaStore) -> Vec<f64> {
    let (a, b) = canonical_pair(cve_a, cve_b);
    let meta_a = store.lookup(&a).cloned().unwrap_or_else(|| CveMeta::absent(&a));
    let meta_b = store.lookup(&b).cloned().unwrap_or_else(|| CveMeta::absent(&b));
    let block_a = per_cve_block(&meta_a);
    let block_b = per_cve_block(&meta_b);
    let mut features = Vec::with_capacity(PAIR_DIM);
    features.extend_from_slice(&block_a);
    features.extend_from_slice(&block_b);
    features.push((meta_a.cvss_base - meta_b.cvss_base).abs());
    features.push(meta_a.cvss_base * meta_b.cvss_base);
    features.push((meta_a.published_year - meta_b.published_year).abs() as f64);
    features.push(if meta_a.exploited && meta_b.exploited { 1.0 } else { 0.0 });
    features
}

/// Row-major (n × 22) feature matrix for a pair list.
pub fn pair_feature_matrix(pairs: &[PairExample], store: &MetaStore) -> Vec<f64> {
    let mut matrix = Vec::with_capacity(pairs.len() * PAIR_DIM);
    for pair in pairs {
        matrix.extend(build_pair_features(&pair.cve_a, &pair.cve_b, store));
    }
    matrix
}

/// Metadata coverage over a pair list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCoverage {
    pub pairs: usize,
    pub pairs_with_full_metadata: usize,
    /// Pairs where neither CVE has a snapshot record (features all-imputed).
    pub pairs_both_absent: Vec<[String; 2]>,
    pub missing_cves: Vec<String>,
}

pub fn feature_coverage(pairs: &[PairExample], store: &MetaStore) -> FeatureCoverage {
    let mut missing = std::collections::BTreeSet::new();
    let mut both_absent = Vec::new();
    let mut full = 0;
    for pair in pairs {
        let a = store.lookup(&pair.cve_a).is_some();
        let b = store.lookup(&pair.cve_b).is_some();
        if !a {
            missing.insert(pair.cve_a.clone());
        }
        if !b {
            missing.insert(pair.cve_b.clone());
        }
        match (a, b) {
            (true, true) => full += 1,
            (false, false) => both_absent.push([pair.cve_a.clone(), pair.cve_b.clone()]),
            _ => {}
        }
    }
    FeatureCoverage {
        pairs: pairs.len(),
        pairs_with_full_metadata: full,
        pairs_both_absent: both_absent,
        missing_cves: missing.into_iter().collect(),
    }
}

/// Fresh Glorot-initialized parameter store with the fixed MLP layout.
pub fn mlp_params(seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for layer in 0..MLP_WIDTHS.len() - 1 {
        let (fan_in, fan_out) = (MLP_WIDTHS[layer], MLP_WIDTHS[layer + 1]);
        store
            .init_glorot(&format!("w{}", layer + 1), fan_in, fan_out, &mut rng)
            .expect("mlp weight init");
        store
            .init_zeros(&format!("b{}", layer + 1), vec![fan_out])
            .expect("mlp bias init");
    }
    store
}

/// Forward pass to logits, shape (n, 1). Dropout is applied after each
/// hidden ReLU only when an RNG is supplied (training mode).
fn mlp_forward(
    params: &ParamStore,
    x: &Tensor,
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor, TensorError> {
    let mut h = x.clone();
    for layer in 1..MLP_WIDTHS.len() {
        let w = params.get(&format!("w{layer}")).expect("weight present");
        let b = params.get(&format!("b{layer}")).expect("bias present");
        h = h.matmul(&w)?.add(&b)?;
        if layer < MLP_WIDTHS.len() - 1 {
            h = h.relu()?;
            if let Some(r) = rng.as_deref_mut() {
                if dropout > 0.0 {
                    h = h.dropout(dropout, r)?;
                }
            }
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug)]
pub struct MlpTrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

/// Trains the MLP with Adam (no weight decay) and BCE loss, early-stopping
/// on validation ROC-AUC. The returned checkpoint is the best-validation
/// epoch's parameters plus the training-set normalization statistics.
pub fn train_mlp(
    train: &[PairExample],
    val: &[PairExample],
    meta_store: &MetaStore,
    config: &MlpConfig,
) -> Result<MlpTrainOutcome, PredictorError> {
    if config.max_epochs == 0 || config.patience == 0 || config.patience >= config.max_epochs {
        return Err(PredictorError::InvalidConfig(format!(
            "need 0 < patience < max_epochs, got patience={} max_epochs={}",
            config.patience, config.max_epochs
        )));
    }
    if !(0.0..1.0).contains(&config.dropout) {
        return Err(PredictorError::InvalidConfig(format!(
            "dropout must be in [0,1), got {}",
            config.dropout
        )));
    }
    if config.lr <= 0.0 || config.batch_size == 0 {
        return Err(PredictorError::InvalidConfig(
            "lr must be positive and batch_size nonzero".to_string(),
        ));
    }
    if train.is_empty() {
        return Err(PredictorError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(PredictorError::EmptySplit("validation"));
    }
    let val_labels: Vec<bool> = val.iter().map(|p| p.label == 1).collect();
    if val_labels.iter().all(|&l| l) || val_labels.iter().all(|&l| !l) {
        return Err(PredictorError::SingleClassValidation);
    }

    let mut train_x = pair_feature_matrix(train, meta_store);
    let norm = NormBlock::fit(&train_x, PAIR_DIM, &PAIR_Z_COLUMNS);
    norm.apply(&mut train_x, PAIR_DIM);
    let mut val_x = pair_feature_matrix(val, meta_store);
    norm.apply(&mut val_x, PAIR_DIM);
    let train_y: Vec<f64> = train.iter().map(|p| p.label as f64).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = mlp_params(config.seed);
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let val_tensor = Tensor::leaf(val_x, vec![val.len(), PAIR_DIM])?;

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ModelCheckpoint)> = None;
    let mut stale = 0usize;
    let mut norm_stats = BTreeMap::new();
    norm_stats.insert("pair".to_string(), norm.clone());
    let mut config_json = serde_json::to_value(config).expect("config serializes");
    config_json["widths"] = serde_json::json!(MLP_WIDTHS);

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut xb = Vec::with_capacity(batch.len() * PAIR_DIM);
            let mut yb = Vec::with_capacity(batch.len());
            for &i in batch {
                xb.extend_from_slice(&train_x[i * PAIR_DIM..(i + 1) * PAIR_DIM]);
                yb.push(train_y[i]);
            }
            let x = Tensor::leaf(xb, vec![batch.len(), PAIR_DIM])?;
            let logits = mlp_forward(&params, &x, config.dropout, Some(&mut rng))?;
            let loss = logits.bce_with_logits_mean(&yb)?;
            epoch_loss += loss.item() * batch.len() as f64;
            let grads = loss.backward()?;
            params.adam_step(&grads, &adam)?;
        }
        let train_loss = epoch_loss / train.len() as f64;

        let val_logits = mlp_forward(&params, &val_tensor, 0.0, None)?;
        let val_scores = val_logits.sigmoid()?.values().to_vec();
        let val_auc = roc_auc(&val_scores, &val_labels)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_auc,
        });

        let improved = best.as_ref().map_or(true, |(_, auc, _)| val_auc > *auc);
        if improved {
            let snapshot = ModelCheckpoint::from_store(
                MODEL_KIND_MLP,
                config_json.clone(),
                &params,
                norm_stats.clone(),
                config.seed,
            );
            best = Some((epoch, val_auc, snapshot));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let (best_epoch, best_val_auc, checkpoint) = best.expect("at least one epoch ran");
    Ok(MlpTrainOutcome {
        checkpoint,
        history,
        best_epoch,
        best_val_auc,
    })
}

/// One row of a scored ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPair {
    pub rank: usize,
    pub cve_a: String,
    pub cve_b: String,
    pub probability: f64,
}

/// Scores pairs with a trained MLP checkpoint and returns them sorted by
/// descending probability (ties broken by canonical pair id).
pub fn score_pairs(
    checkpoint: &ModelCheckpoint,
    pairs: &[PairExample],
    store: &MetaStore,
) -> Result<Vec<RankedPair>, PredictorError> {
    checkpoint.expect_kind(MODEL_KIND_MLP)?;
    let norm = checkpoint
        .norm_stats
        .get("pair")
        .ok_or_else(|| {
            PredictorError::IncompatibleCheckpoint(
                "checkpoint lacks `pair` normalization statistics".to_string(),
            )
        })?;
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let mut params = mlp_params(checkpoint.rng_seed);
    params.load_checkpoint(checkpoint)?;
    let mut x = pair_feature_matrix(pairs, store);
    norm.apply(&mut x, PAIR_DIM);
    let tensor = Tensor::leaf(x, vec![pairs.len(), PAIR_DIM])?;
    let probabilities = mlp_forward(&params, &tensor, 0.0, None)?
        .sigmoid()?
        .values()
        .to_vec();

    let mut ranked: Vec<RankedPair> = pairs
        .iter()
        .zip(&probabilities)
        .map(|(pair, &probability)| RankedPair {
            rank: 0,
            cve_a: pair.cve_a.clone(),
            cve_b: pair.cve_b.clone(),
            probability,
        })
        .collect();
    ranked.sort_by(|x, y| {
        y.probability
            .total_cmp(&x.probability)
            .then_with(|| (x.cve_a.as_str(), x.cve_b.as_str()).cmp(&(y.cve_a.as_str(), y.cve_b.as_str())))
    });
    for (i, row) in ranked.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    Ok(ranked)
}

/// Writes a ranking as CSV with header `rank,cve_a,cve_b,probability`.
pub fn write_ranking_csv(ranked: &[RankedPair], path: &Path) -> Result<(), PredictorError> {
    let display = path.display().to_string();
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in ranked {
        writer.serialize(row).map_err(|e| PredictorError::Io {
            path: display.clone(),
            source: std::io::Error::other(e),
        })?;
    }
    let bytes = writer.into_inner().map_err(|e| PredictorError::Io {
        path: display.clone(),
        source: std::io::Error::other(e),
    })?;
    std::fs::write(path, bytes).map_err(|source| PredictorError::Io {
        path: display,
        source,
    })
}

/// Reads a ranking CSV written by [`write_ranking_csv`].
pub fn read_ranking_csv(path: &Path) -> Result<Vec<RankedPair>, PredictorError> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| PredictorError::Io {
        path: display.clone(),
        source: std::io::Error::other(e),
    })?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        let row: RankedPair = record.map_err(|e| PredictorError::Io {
            path: display.clone(),
            source: std::io::Error::other(e),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Gradient check for the full MLP loss on a random feature batch: compares
/// reverse-mode gradients against central finite differences and reports the
/// worst relative error.
pub fn mlp_gradcheck(
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport, PredictorError> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 16;
    let x: Vec<f64> = (0..n * PAIR_DIM)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.5))).collect();
    let xt = Tensor::leaf(x, vec![n, PAIR_DIM])?;
    let mut params = mlp_params(seed.wrapping_add(1));
    Ok(gradient_check(
        &mut params,
        |p| mlp_forward(p, &xt, 0.0, None)?.bce_with_logits_mean(&y),
        samples_per_param,
        &mut rng,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nvd::Severity;
    use crate::tensor::gradient_check;
    use rand::Rng;

    fn meta(id: &str, cvss: f64, severity: Severity, year: i64, exploited: bool, refs: usize, cwes: usize) -> CveMeta {
        CveMeta {
            cve_id: id.to_string(),
            cvss_base: cvss,
            severity,
            published_year: year,
            exploited,
            reference_count: refs,
            cwe_ids: (0..cwes).map(|i| format!("CWE-{}", 70 + i)).collect(),
        }
    }

    fn hand_store() -> MetaStore {
        let mut store = MetaStore::empty();
        store.insert(meta("CVE-2021-0001", 9.8, Severity::Critical, 2021, true, 25, 1));
        store.insert(meta("CVE-2021-0002", 7.5, Severity::High, 2020, true, 10, 2));
        store
    }

    #[test]
    fn hand_computed_feature_vector() {
        let store = hand_store();
        let f = build_pair_features("CVE-2021-0001", "CVE-2021-0002", &store);
        assert_eq!(f.len(), 22);
        assert_eq!(&f[..9], &[9.8, 0.0, 0.0, 0.0, 1.0, 0.7, 1.0, 0.25, 1.0]);
        assert_eq!(f[9], 7.5);
        assert_eq!(&f[10..14], &[0.0, 0.0, 1.0, 0.0]);
        assert!((f[14] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(&f[15..18], &[1.0, 0.1, 2.0]);
        assert!((f[18] - 2.3).abs() < 1e-12);
        assert!((f[19] - 73.5).abs() < 1e-9);
        assert_eq!(f[20], 1.0);
        assert_eq!(f[21], 1.0);
    }

    #[test]
    fn argument_order_is_irrelevant() {
        let store = hand_store();
        let ab = build_pair_features("CVE-2021-0001", "CVE-2021-0002", &store);
        let ba = build_pair_features("CVE-2021-0002", "CVE-2021-0001", &store);
        assert_eq!(ab, ba);
    }

    #[test]
    fn identical_metadata_zeroes_differences() {
        let mut store = MetaStore::empty();
        store.insert(meta("CVE-2020-0001", 6.0, Severity::Medium, 2020, true, 5, 0));
        store.insert(meta("CVE-2020-0002", 6.0, Severity::Medium, 2020, true, 5, 0));
        let f = build_pair_features("CVE-2020-0001", "CVE-2020-0002", &store);
        assert_eq!(&f[18..], &[0.0, 36.0, 0.0, 1.0]);
    }

    #[test]
    fn absent_cves_impute_zero_blocks() {
        let store = MetaStore::empty();
        let f = build_pair_features("CVE-2030-0001", "CVE-2030-0002", &store);
        assert_eq!(f, vec![0.0; 22]);
    }

    #[test]
    fn coverage_report_flags_missing_metadata() {
        let store = hand_store();
        let pairs = vec![
            PairExample {
                cve_a: "CVE-2021-0001".into(),
                cve_b: "CVE-2021-0002".into(),
                label: 1,
                origin: "c".into(),
            },
            PairExample {
                cve_a: "CVE-2021-0001".into(),
                cve_b: "CVE-2030-0001".into(),
                label: 0,
                origin: "sampled".into(),
            },
            PairExample {
                cve_a: "CVE-2030-0001".into(),
                cve_b: "CVE-2030-0002".into(),
                label: 0,
                origin: "sampled".into(),
            },
        ];
        let coverage = feature_coverage(&pairs, &store);
        assert_eq!(coverage.pairs, 3);
        assert_eq!(coverage.pairs_with_full_metadata, 1);
        assert_eq!(
            coverage.pairs_both_absent,
            vec![["CVE-2030-0001".to_string(), "CVE-2030-0002".to_string()]]
        );
        assert_eq!(coverage.missing_cves, vec!["CVE-2030-0001", "CVE-2030-0002"]);
    }

    #[test]
    fn interaction_block_invariants_hold_for_random_metadata() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = MetaStore::empty();
        let ids: Vec<String> = (0..20).map(|i| format!("CVE-2020-{i:04}")).collect();
        for id in &ids {
            store.insert(meta(
                id,
                rng.random_range(0.0..10.0),
                Severity::Medium,
                rng.random_range(2000..2026),
                rng.random_bool(0.5),
                rng.random_range(0..200),
                rng.random_range(0..4),
            ));
        }
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                let f = build_pair_features(&ids[i], &ids[j], &store);
                assert_eq!(f.len(), 22);
                assert!(f.iter().all(|v| v.is_finite()));
                assert!(f[18] >= 0.0);
                assert!((0.0..=100.0).contains(&f[19]));
                assert!(f[21] == 0.0 || f[21] == 1.0);
            }
        }
    }

    /// CVE universe where a pair is positive iff both members are exploited
    /// and their CVSS product exceeds 50 — linearly separable in the
    /// interaction features.
    fn separable_setup(n_cves: usize, seed: u64) -> (MetaStore, Vec<PairExample>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = MetaStore::empty();
        let ids: Vec<String> = (0..n_cves).map(|i| format!("CVE-2020-{i:04}")).collect();
        for id in &ids {
            let cvss: f64 = rng.random_range(4.0..10.0);
            let severity = if cvss >= 9.0 {
                Severity::Critical
            } else if cvss >= 7.0 {
                Severity::High
            } else {
                Severity::Medium
            };
            store.insert(meta(
                id,
                cvss,
                severity,
                rng.random_range(2010..2024),
                rng.random_bool(0.6),
                rng.random_range(0..60),
                rng.random_range(0..3),
            ));
        }
        let mut pairs = Vec::new();
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                let a = store.lookup(&ids[i]).unwrap();
                let b = store.lookup(&ids[j]).unwrap();
                let label =
                    (a.exploited && b.exploited && a.cvss_base * b.cvss_base > 50.0) as u8;
                pairs.push(PairExample {
                    cve_a: ids[i].clone(),
                    cve_b: ids[j].clone(),
                    label,
                    origin: "rule".to_string(),
                });
            }
        }
        rand::seq::SliceRandom::shuffle(pairs.as_mut_slice(), &mut rng);
        (store, pairs)
    }

    fn three_way(pairs: &[PairExample]) -> (&[PairExample], &[PairExample], &[PairExample]) {
        let n = pairs.len();
        let train_end = n * 70 / 100;
        let val_end = train_end + n * 15 / 100;
        (&pairs[..train_end], &pairs[train_end..val_end], &pairs[val_end..])
    }

    #[test]
    fn separable_pairs_reach_high_validation_auc() {
        let (store, pairs) = separable_setup(34, 3);
        let (train, val, _) = three_way(&pairs);
        assert!(val.iter().any(|p| p.label == 1) && val.iter().any(|p| p.label == 0));
        let outcome = train_mlp(train, val, &store, &MlpConfig::default()).unwrap();
        assert!(
            outcome.best_val_auc >= 0.95,
            "val AUC {} after {} epochs",
            outcome.best_val_auc,
            outcome.history.len()
        );
        assert_eq!(outcome.checkpoint.model_kind, "MLP");
        assert!(outcome.checkpoint.norm_stats.contains_key("pair"));
    }

    #[test]
    fn training_is_deterministic_and_early_stops() {
        let (store, pairs) = separable_setup(26, 5);
        let (train, val, _) = three_way(&pairs);
        let config = MlpConfig::default();
        let a = train_mlp(train, val, &store, &config).unwrap();
        let b = train_mlp(train, val, &store, &config).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best_epoch, b.best_epoch);
        // Early stopping bound: no more than `patience` epochs past the best.
        assert!(a.history.len() <= a.best_epoch + config.patience);
    }

    #[test]
    fn split_validation_errors() {
        let (store, pairs) = separable_setup(12, 9);
        let (train, val, _) = three_way(&pairs);
        assert!(matches!(
            train_mlp(&[], val, &store, &MlpConfig::default()),
            Err(PredictorError::EmptySplit("train"))
        ));
        assert!(matches!(
            train_mlp(train, &[], &store, &MlpConfig::default()),
            Err(PredictorError::EmptySplit("validation"))
        ));
        let all_positive: Vec<PairExample> = val
            .iter()
            .map(|p| PairExample {
                label: 1,
                ..p.clone()
            })
            .collect();
        assert!(matches!(
            train_mlp(train, &all_positive, &store, &MlpConfig::default()),
            Err(PredictorError::SingleClassValidation)
        ));
        let bad = MlpConfig {
            patience: 60,
            ..MlpConfig::default()
        };
        assert!(matches!(
            train_mlp(train, val, &store, &bad),
            Err(PredictorError::InvalidConfig(_))
        ));
    }

    #[test]
    fn converged_model_separates_training_set() {
        let (store, pairs) = separable_setup(30, 1);
        let (train, val, _) = three_way(&pairs);
        let outcome = train_mlp(train, val, &store, &MlpConfig::default()).unwrap();
        let ranked = score_pairs(&outcome.checkpoint, train, &store).unwrap();
        let prob_of: BTreeMap<(String, String), f64> = ranked
            .iter()
            .map(|r| ((r.cve_a.clone(), r.cve_b.clone()), r.probability))
            .collect();
        let scores: Vec<f64> = train
            .iter()
            .map(|p| prob_of[&(p.cve_a.clone(), p.cve_b.clone())])
            .collect();
        let labels: Vec<bool> = train.iter().map(|p| p.label == 1).collect();
        let auc = roc_auc(&scores, &labels).unwrap();
        assert!(auc >= 0.999, "train AUC {auc}");
    }

    #[test]
    fn scoring_is_deterministic_sorted_and_rank_stamped() {
        let (store, pairs) = separable_setup(24, 2);
        let (train, val, test) = three_way(&pairs);
        let outcome = train_mlp(train, val, &store, &MlpConfig::default()).unwrap();
        let first = score_pairs(&outcome.checkpoint, test, &store).unwrap();
        let second = score_pairs(&outcome.checkpoint, test, &store).unwrap();
        assert_eq!(first, second);
        for (i, row) in first.iter().enumerate() {
            assert_eq!(row.rank, i + 1);
            assert!((0.0..=1.0).contains(&row.probability));
            if i > 0 {
                assert!(first[i - 1].probability >= row.probability);
            }
        }
        assert!(score_pairs(&outcome.checkpoint, &[], &store).unwrap().is_empty());
    }

    #[test]
    fn ties_break_by_canonical_pair_id() {
        let (store, pairs) = separable_setup(20, 4);
        let (train, val, _) = three_way(&pairs);
        let outcome = train_mlp(train, val, &store, &MlpConfig::default()).unwrap();
        // Two unknown pairs share identical (all-imputed) features, hence
        // identical probabilities; order must follow pair ids.
        let unknown = vec![
            PairExample {
                cve_a: "CVE-2031-0002".into(),
                cve_b: "CVE-2031-0003".into(),
                label: 0,
                origin: "x".into(),
            },
            PairExample {
                cve_a: "CVE-2031-0001".into(),
                cve_b: "CVE-2031-0004".into(),
                label: 0,
                origin: "x".into(),
            },
        ];
        let ranked = score_pairs(&outcome.checkpoint, &unknown, &store).unwrap();
        assert_eq!(ranked[0].probability, ranked[1].probability);
        assert_eq!(ranked[0].cve_a, "CVE-2031-0001");
        assert_eq!(ranked[1].cve_a, "CVE-2031-0002");
    }

    #[test]
    fn wrong_kind_checkpoint_is_rejected() {
        let (store, pairs) = separable_setup(26, 6);
        let (train, val, _) = three_way(&pairs);
        let outcome = train_mlp(train, val, &store, &MlpConfig::default()).unwrap();
        let mut wrong = outcome.checkpoint;
        wrong.model_kind = "HGAT".to_string();
        assert!(matches!(
            score_pairs(&wrong, train, &store),
            Err(PredictorError::IncompatibleCheckpoint(_))
        ));

        let mut no_norm = wrong;
        no_norm.model_kind = MODEL_KIND_MLP.to_string();
        no_norm.norm_stats.clear();
        assert!(matches!(
            score_pairs(&no_norm, train, &store),
            Err(PredictorError::IncompatibleCheckpoint(_))
        ));
    }

    #[test]
    fn ranking_csv_has_expected_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ranking.csv");
        let rows = vec![RankedPair {
            rank: 1,
            cve_a: "CVE-2020-0001".to_string(),
            cve_b: "CVE-2020-0002".to_string(),
            probability: 0.875,
        }];
        write_ranking_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("rank,cve_a,cve_b,probability\n"));
        assert!(text.contains("1,CVE-2020-0001,CVE-2020-0002,0.875"));
    }

    #[test]
    fn full_stack_gradient_check_passes() {
        let (store, pairs) = separable_setup(10, 13);
        let batch = &pairs[..16.min(pairs.len())];
        let mut x = pair_feature_matrix(batch, &store);
        let norm = NormBlock::fit(&x, PAIR_DIM, &PAIR_Z_COLUMNS);
        norm.apply(&mut x, PAIR_DIM);
        let xt = Tensor::leaf(x, vec![batch.len(), PAIR_DIM]).unwrap();
        let yv: Vec<f64> = batch.iter().map(|p| p.label as f64).collect();
        let mut params = mlp_params(21);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let report = gradient_check(
            &mut params,
            |p| mlp_forward(p, &xt, 0.0, None)?.bce_with_logits_mean(&yv),
            4,
            &mut rng,
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "max rel error {} at {:?}",
            report.max_rel_error,
            report.worst
        );
    }
}
