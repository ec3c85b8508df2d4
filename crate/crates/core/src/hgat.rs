//! Heterogeneous graph attention network over evidence graphs.
//!
//! Two attention levels per layer: node-level attention scores each incoming
//! edge within a relation (leaky-ReLU GAT scoring + per-destination softmax),
//! then relation-level attention mixes the per-relation messages available to
//! a node type. Every node type gets an implicit SELF relation so isolated
//! nodes keep their own signal. Heads are concatenated in hidden layers and
//! averaged in the final one; a linear head over component embeddings emits
//! two logits (safe / has-CVE).
//!
//! Message directions follow the evidence semantics: dependency information
//! flows from a dependency to its dependents (DEPENDS_ON reversed), CVE
//! evidence flows into components, CWE context flows into CVEs.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    ColumnSpec, EvidenceGraph, FeatureSpec, LeakagePolicy, NodeType, NormMode, Relation,
    LABEL_KIND_HAS_ANY_CVE,
};
use crate::metrics::{confusion_metrics, ConfusionMetrics, MetricsError};
use crate::tensor::{
    gradient_check, AdamConfig, CheckpointError, GradCheckReport, ModelCheckpoint, NormBlock,
    ParamStore, Tensor, TensorError,
};

pub const MODEL_KIND_HGAT: &str = "HGAT";

const LEAKY_SLOPE: f64 = 0.2;
const NODE_TYPES: [NodeType; 3] = [NodeType::Component, NodeType::Cve, NodeType::Cwe];

#[derive(Debug, Error)]
pub enum HgatError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("feature spec mismatch: {0}")]
    FeatureSpecMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl From<CheckpointError> for HgatError {
    fn from(e: CheckpointError) -> Self {
        HgatError::IncompatibleCheckpoint(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HgatConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub batch_graphs: usize,
    pub leakage_policy: LeakagePolicy,
    pub seed: u64,
}

impl Default for HgatConfig {
    fn default() -> HgatConfig {
        HgatConfig {
            layers: 2,
            heads: 2,
            hidden_dim: 64,
            dropout: 0.2,
            lr: 1e-3,
            weight_decay: 5e-4,
            max_epochs: 30,
            batch_graphs: 2,
            leakage_policy: LeakagePolicy::Strict,
            seed: 7,
        }
    }
}

fn validate_config(config: &HgatConfig) -> Result<(), HgatError> {
    if config.layers == 0
        || config.heads == 0
        || config.hidden_dim == 0
        || config.max_epochs == 0
        || config.batch_graphs == 0
    {
        return Err(HgatError::InvalidConfig(
            "layers, heads, hidden_dim, max_epochs and batch_graphs must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.dropout) {
        return Err(HgatError::InvalidConfig(format!(
            "dropout must be in [0,1), got {}",
            config.dropout
        )));
    }
    if config.lr <= 0.0 || config.weight_decay < 0.0 {
        return Err(HgatError::InvalidConfig(
            "lr must be positive and weight_decay non-negative".into(),
        ));
    }
    Ok(())
}

/// One message channel: a relation (or the implicit SELF loop of a type)
/// with its source and destination node types.
struct Channel {
    key: &'static str,
    src: NodeType,
    dst: NodeType,
    relation: Option<Relation>,
}

const CHANNELS: [Channel; 6] = [
    Channel {
        key: "self.component",
        src: NodeType::Component,
        dst: NodeType::Component,
        relation: None,
    },
    Channel {
        key: "self.cve",
        src: NodeType::Cve,
        dst: NodeType::Cve,
        relation: None,
    },
    Channel {
        key: "self.cwe",
        src: NodeType::Cwe,
        dst: NodeType::Cwe,
        relation: None,
    },
    Channel {
        key: "depends_on",
        src: NodeType::Component,
        dst: NodeType::Component,
        relation: Some(Relation::DependsOn),
    },
    Channel {
        key: "has_vulnerability",
        src: NodeType::Cve,
        dst: NodeType::Component,
        relation: Some(Relation::HasVulnerability),
    },
    Channel {
        key: "has_cwe",
        src: NodeType::Cwe,
        dst: NodeType::Cve,
        relation: Some(Relation::HasCwe),
    },
];

fn type_index(node_type: NodeType) -> usize {
    match node_type {
        NodeType::Component => 0,
        NodeType::Cve => 1,
        NodeType::Cwe => 2,
    }
}

fn type_key(node_type: NodeType) -> &'static str {
    match node_type {
        NodeType::Component => "component",
        NodeType::Cve => "cve",
        NodeType::Cwe => "cwe",
    }
}

fn input_width(node_type: NodeType) -> usize {
    FeatureSpec::columns(node_type).len()
}

fn proj_name(layer: usize, node_type: NodeType, part: &str) -> String {
    format!("l{layer}.proj.{}.{part}", type_key(node_type))
}

fn att_name(layer: usize, channel: &str, head: usize) -> String {
    format!("l{layer}.att.{channel}.h{head}")
}

fn rel_name(layer: usize, node_type: NodeType, head: usize) -> String {
    format!("l{layer}.rel.{}.h{head}", type_key(node_type))
}

/// Fresh Glorot-initialized parameters for the configured architecture.
pub fn hgat_params(config: &HgatConfig) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let wide = config.heads * config.hidden_dim;
    for layer in 1..=config.layers {
        for &node_type in &NODE_TYPES {
            let in_dim = if layer == 1 { input_width(node_type) } else { wide };
            store
                .init_glorot(&proj_name(layer, node_type, "w"), in_dim, wide, &mut rng)
                .expect("projection init");
            store
                .init_zeros(&proj_name(layer, node_type, "b"), vec![wide])
                .expect("projection bias init");
        }
        for channel in &CHANNELS {
            for head in 0..config.heads {
                store
                    .init_glorot(
                        &att_name(layer, channel.key, head),
                        2 * config.hidden_dim,
                        1,
                        &mut rng,
                    )
                    .expect("attention init");
            }
        }
        for &node_type in &NODE_TYPES {
            for head in 0..config.heads {
                store
                    .init_glorot(&rel_name(layer, node_type, head), config.hidden_dim, 1, &mut rng)
                    .expect("relation query init");
            }
        }
    }
    store
        .init_glorot("cls.w", config.hidden_dim, 2, &mut rng)
        .expect("classifier init");
    store.init_zeros("cls.b", vec![2]).expect("classifier bias init");
    store
}

/// Node tables and typed edge lists for a disjoint union of graphs, with
/// normalization already applied and any masks already dropped.
struct GraphBatch {
    counts: [usize; 3],
    features: [Vec<f64>; 3],
    edges: BTreeMap<&'static str, Vec<(usize, usize)>>,
    labels: Vec<bool>,
    sizes: Vec<usize>,
}

impl GraphBatch {
    fn from_graphs(
        graphs: &[&EvidenceGraph],
        mask: Option<Relation>,
        norms: &BTreeMap<String, NormBlock>,
    ) -> GraphBatch {
        let mut batch = GraphBatch {
            counts: [0; 3],
            features: [Vec::new(), Vec::new(), Vec::new()],
            edges: CHANNELS.iter().map(|c| (c.key, Vec::new())).collect(),
            labels: Vec::new(),
            sizes: Vec::new(),
        };
        for graph in graphs {
            let strict_auto = graph.label_kind == LABEL_KIND_HAS_ANY_CVE
                && graph.leakage_policy == LeakagePolicy::Strict;
            let offsets = batch.counts;
            for (t, rows) in [
                &graph.component_features,
                &graph.cve_features,
                &graph.cwe_features,
            ]
            .into_iter()
            .enumerate()
            {
                for row in rows {
                    batch.features[t].extend_from_slice(row);
                }
                batch.counts[t] += rows.len();
            }
            batch.labels.extend(graph.labels.iter().map(|&l| l == 1));
            batch.sizes.push(graph.component_ids.len());
            for channel in &CHANNELS {
                let Some(relation) = channel.relation else { continue };
                if mask == Some(relation)
                    || (strict_auto && relation == Relation::HasVulnerability)
                {
                    continue;
                }
                let (dst_off, src_off) =
                    (offsets[type_index(channel.dst)], offsets[type_index(channel.src)]);
                let list = batch.edges.get_mut(channel.key).expect("channel present");
                // Stored edge tuples lead with the relation's subject, which
                // is the message *destination* for every relation here.
                for &(subject, object) in graph.edges(relation) {
                    list.push((dst_off + subject, src_off + object));
                }
            }
        }
        for channel in &CHANNELS {
            if channel.relation.is_none() {
                let n = batch.counts[type_index(channel.dst)];
                *batch.edges.get_mut(channel.key).expect("channel present") =
                    (0..n).map(|v| (v, v)).collect();
            }
        }
        for (t, &node_type) in NODE_TYPES.iter().enumerate() {
            if let Some(block) = norms.get(type_key(node_type)) {
                block.apply(&mut batch.features[t], input_width(node_type));
            }
        }
        batch
    }
}

/// Full forward pass to component logits, shape (n_components, 2). Dropout
/// is applied to each layer's inputs only when an RNG is supplied.
fn batch_logits(
    params: &ParamStore,
    batch: &GraphBatch,
    config: &HgatConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor, TensorError> {
    let d = config.hidden_dim;
    let mut h: Vec<Tensor> = NODE_TYPES
        .iter()
        .enumerate()
        .map(|(t, &node_type)| {
            Tensor::leaf(
                batch.features[t].clone(),
                vec![batch.counts[t], input_width(node_type)],
            )
        })
        .collect::<Result<_, _>>()?;

    for layer in 1..=config.layers {
        if let Some(r) = rng.as_deref_mut() {
            if config.dropout > 0.0 {
                for table in h.iter_mut() {
                    *table = table.dropout(config.dropout, r)?;
                }
            }
        }
        let projected: Vec<Tensor> = NODE_TYPES
            .iter()
            .enumerate()
            .map(|(t, &node_type)| {
                let w = params.get(&proj_name(layer, node_type, "w")).expect("proj w");
                let b = params.get(&proj_name(layer, node_type, "b")).expect("proj b");
                h[t].matmul(&w)?.add(&b)
            })
            .collect::<Result<_, _>>()?;

        let mut per_head: Vec<Vec<Tensor>> = vec![Vec::new(); 3];
        for head in 0..config.heads {
            let heads_view: Vec<Tensor> = projected
                .iter()
                .map(|p| p.slice_last_dim(head * d, d))
                .collect::<Result<_, _>>()?;
            let mut messages: BTreeMap<&'static str, Tensor> = BTreeMap::new();
            for channel in &CHANNELS {
                let n_dst = batch.counts[type_index(channel.dst)];
                let edge_list = &batch.edges[channel.key];
                if edge_list.is_empty() {
                    messages.insert(channel.key, Tensor::zeros(vec![n_dst, d])?);
                    continue;
                }
                let (dst_idx, src_idx): (Vec<usize>, Vec<usize>) =
                    edge_list.iter().copied().unzip();
                let h_dst = heads_view[type_index(channel.dst)].gather_rows(&dst_idx)?;
                let h_src = heads_view[type_index(channel.src)].gather_rows(&src_idx)?;
                let a = params
                    .get(&att_name(layer, channel.key, head))
                    .expect("attention vector");
                let scores = Tensor::concat_last_dim(&[h_dst, h_src.clone()])?
                    .matmul(&a)?
                    .leaky_relu(LEAKY_SLOPE)?;
                let alpha = scores.segment_softmax(&dst_idx)?;
                let message = h_src.mul(&alpha)?.segment_sum(&dst_idx, n_dst)?;
                messages.insert(channel.key, message);
            }
            for (t, &node_type) in NODE_TYPES.iter().enumerate() {
                let incoming: Vec<&Channel> =
                    CHANNELS.iter().filter(|c| c.dst == node_type).collect();
                if batch.counts[t] == 0 {
                    per_head[t].push(Tensor::zeros(vec![0, d])?);
                    continue;
                }
                let q = params
                    .get(&rel_name(layer, node_type, head))
                    .expect("relation query");
                let scores: Vec<Tensor> = incoming
                    .iter()
                    .map(|c| messages[c.key].matmul(&q))
                    .collect::<Result<_, _>>()?;
                let weights = Tensor::concat_last_dim(&scores)?.softmax_last_dim()?;
                let mut combined: Option<Tensor> = None;
                for (i, c) in incoming.iter().enumerate() {
                    let term = messages[c.key].mul(&weights.slice_last_dim(i, 1)?)?;
                    combined = Some(match combined {
                        None => term,
                        Some(acc) => acc.add(&term)?,
                    });
                }
                per_head[t].push(combined.expect("at least one channel per type"));
            }
        }
        for t in 0..3 {
            h[t] = if layer < config.layers {
                Tensor::concat_last_dim(&per_head[t])?.elu()?
            } else {
                let mut acc = per_head[t][0].clone();
                for extra in &per_head[t][1..] {
                    acc = acc.add(extra)?;
                }
                acc.scale(1.0 / config.heads as f64)?
            };
        }
    }

    let w = params.get("cls.w").expect("classifier weight");
    let b = params.get("cls.b").expect("classifier bias");
    h[0].matmul(&w)?.add(&b)
}

fn batch_loss(
    params: &ParamStore,
    batch: &GraphBatch,
    config: &HgatConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor, TensorError> {
    let logits = batch_logits(params, batch, config, rng)?;
    let classes: Vec<usize> = batch.labels.iter().map(|&l| l as usize).collect();
    logits.log_softmax_last_dim()?.nll_mean(&classes)
}

fn ensure_compatible(config: &HgatConfig, graph: &EvidenceGraph) -> Result<(), HgatError> {
    if graph.leakage_policy != config.leakage_policy {
        return Err(HgatError::FeatureSpecMismatch(format!(
            "graph {} carries {:?} features but the model expects {:?}",
            graph.sbom_id, graph.leakage_policy, config.leakage_policy
        )));
    }
    for (&node_type, rows) in NODE_TYPES.iter().zip([
        &graph.component_features,
        &graph.cve_features,
        &graph.cwe_features,
    ]) {
        let width = input_width(node_type);
        if let Some(row) = rows.iter().find(|r| r.len() != width) {
            return Err(HgatError::FeatureSpecMismatch(format!(
                "graph {} has a {} feature row of width {} (expected {width})",
                graph.sbom_id,
                type_key(node_type),
                row.len()
            )));
        }
    }
    Ok(())
}

fn z_column_indices(columns: &[ColumnSpec]) -> Vec<usize> {
    columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm == NormMode::ZScore)
        .map(|(i, _)| i)
        .collect()
}

/// Fits per-node-type z-score statistics over the training graphs.
fn fit_norms(graphs: &[EvidenceGraph]) -> BTreeMap<String, NormBlock> {
    let mut norms = BTreeMap::new();
    for &node_type in &NODE_TYPES {
        let width = input_width(node_type);
        let mut flat = Vec::new();
        for graph in graphs {
            let rows = match node_type {
                NodeType::Component => &graph.component_features,
                NodeType::Cve => &graph.cve_features,
                NodeType::Cwe => &graph.cwe_features,
            };
            for row in rows {
                flat.extend_from_slice(row);
            }
        }
        let columns = z_column_indices(FeatureSpec::columns(node_type));
        norms.insert(
            type_key(node_type).to_string(),
            NormBlock::fit(&flat, width, &columns),
        );
    }
    norms
}

/// Aggregate component-classification metrics, shaped for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: usize,
}

impl From<ConfusionMetrics> for EvalReport {
    fn from(m: ConfusionMetrics) -> EvalReport {
        EvalReport {
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            support: m.support,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HgatEpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<EvalReport>,
}

#[derive(Debug)]
pub struct HgatTrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<HgatEpochStats>,
    pub best_epoch: usize,
    pub best_val_f1: Option<f64>,
}

fn eval_with_params(
    params: &ParamStore,
    config: &HgatConfig,
    graphs: &[EvidenceGraph],
    norms: &BTreeMap<String, NormBlock>,
    mask: Option<Relation>,
) -> Result<EvalReport, HgatError> {
    let mut predictions = Vec::new();
    let mut labels = Vec::new();
    for graph in graphs {
        ensure_compatible(config, graph)?;
        let batch = GraphBatch::from_graphs(&[graph], mask, norms);
        let logits = batch_logits(params, &batch, config, None)?;
        for row in logits.values().chunks(2) {
            predictions.push(row[1] > row[0]);
        }
        labels.extend(batch.labels);
    }
    Ok(confusion_metrics(&predictions, &labels)?.into())
}

/// Trains the classifier with Adam and unweighted cross entropy on shuffled
/// two-graph batches, checkpointing the epoch with the best validation F1
/// (ties keep the earlier epoch). With no validation graphs every epoch
/// "improves", so the last one wins.
pub fn train_hgat(
    train: &[EvidenceGraph],
    val: &[EvidenceGraph],
    config: &HgatConfig,
) -> Result<HgatTrainOutcome, HgatError> {
    validate_config(config)?;
    if train.is_empty() {
        return Err(HgatError::EmptyTrainingSet);
    }
    for graph in train.iter().chain(val) {
        ensure_compatible(config, graph)?;
    }
    let norms = fit_norms(train);
    let mut params = hgat_params(config);
    let adam = AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let config_json = serde_json::to_value(config).expect("config serializes");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ModelCheckpoint)> = None;
    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut loss_sum = 0.0;
        let mut node_count = 0usize;
        for chunk in order.chunks(config.batch_graphs) {
            let members: Vec<&EvidenceGraph> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = GraphBatch::from_graphs(&members, None, &norms);
            if batch.labels.is_empty() {
                continue;
            }
            let loss = batch_loss(&params, &batch, config, Some(&mut rng))?;
            let grads = loss.backward()?;
            params.adam_step(&grads, &adam)?;
            loss_sum += loss.item() * batch.labels.len() as f64;
            node_count += batch.labels.len();
        }
        let train_loss = if node_count == 0 { 0.0 } else { loss_sum / node_count as f64 };

        let val_report = if val.is_empty() {
            None
        } else {
            Some(eval_with_params(&params, config, val, &norms, None)?)
        };
        let epoch_f1 = val_report.as_ref().map(|r| r.f1.unwrap_or(0.0));
        history.push(HgatEpochStats {
            epoch,
            train_loss,
            val: val_report,
        });

        let improved = match (&best, epoch_f1) {
            (_, None) => true,
            (None, Some(_)) => true,
            (Some((_, best_f1, _)), Some(f1)) => f1 > *best_f1,
        };
        if improved {
            let snapshot = ModelCheckpoint::from_store(
                MODEL_KIND_HGAT,
                config_json.clone(),
                &params,
                norms.clone(),
                config.seed,
            );
            best = Some((epoch, epoch_f1.unwrap_or(0.0), snapshot));
        }
    }

    let (best_epoch, best_f1, checkpoint) = best.expect("at least one epoch ran");
    Ok(HgatTrainOutcome {
        checkpoint,
        history,
        best_epoch,
        best_val_f1: if val.is_empty() { None } else { Some(best_f1) },
    })
}

fn unpack_checkpoint(
    checkpoint: &ModelCheckpoint,
) -> Result<(HgatConfig, ParamStore), HgatError> {
    checkpoint.expect_kind(MODEL_KIND_HGAT)?;
    let config: HgatConfig = serde_json::from_value(checkpoint.config.clone())
        .map_err(|e| HgatError::IncompatibleCheckpoint(format!("bad config block: {e}")))?;
    validate_config(&config)?;
    for &node_type in &NODE_TYPES {
        if !checkpoint.norm_stats.contains_key(type_key(node_type)) {
            return Err(HgatError::IncompatibleCheckpoint(format!(
                "checkpoint lacks `{}` normalization statistics",
                type_key(node_type)
            )));
        }
    }
    let mut params = hgat_params(&config);
    params.load_checkpoint(checkpoint)?;
    Ok((config, params))
}

/// Evaluates a trained checkpoint over labeled graphs, optionally masking
/// one relation at inference time (the ablation used to probe how much the
/// model leans on each edge type).
pub fn evaluate_hgat(
    checkpoint: &ModelCheckpoint,
    graphs: &[EvidenceGraph],
    mask: Option<Relation>,
) -> Result<EvalReport, HgatError> {
    let (config, params) = unpack_checkpoint(checkpoint)?;
    eval_with_params(&params, &config, graphs, &checkpoint.norm_stats, mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPrediction {
    pub component_id: String,
    pub label: u8,
    pub score: f64,
}

/// Per-component predicted label and positive-class probability.
pub fn predict_components(
    checkpoint: &ModelCheckpoint,
    graph: &EvidenceGraph,
) -> Result<Vec<ComponentPrediction>, HgatError> {
    let (config, params) = unpack_checkpoint(checkpoint)?;
    ensure_compatible(&config, graph)?;
    let batch = GraphBatch::from_graphs(&[graph], None, &checkpoint.norm_stats);
    let logits = batch_logits(&params, &batch, &config, None)?;
    Ok(graph
        .component_ids
        .iter()
        .zip(logits.values().chunks(2))
        .map(|(id, row)| {
            let max = row[0].max(row[1]);
            let e0 = (row[0] - max).exp();
            let e1 = (row[1] - max).exp();
            ComponentPrediction {
                component_id: id.clone(),
                label: u8::from(row[1] > row[0]),
                score: e1 / (e0 + e1),
            }
        })
        .collect())
}

/// Gradient check for the full model loss on the given graphs: compares
/// reverse-mode gradients against central finite differences and reports the
/// worst relative error.
pub fn hgat_gradcheck(
    config: &HgatConfig,
    graphs: &[EvidenceGraph],
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport, HgatError> {
    validate_config(config)?;
    if graphs.is_empty() {
        return Err(HgatError::EmptyTrainingSet);
    }
    for graph in graphs {
        ensure_compatible(config, graph)?;
    }
    let refs: Vec<&EvidenceGraph> = graphs.iter().collect();
    let batch = GraphBatch::from_graphs(&refs, None, &BTreeMap::new());
    let mut params = hgat_params(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(gradient_check(
        &mut params,
        |p| batch_loss(p, &batch, config, None),
        samples_per_param,
        &mut rng,
    )?)
}
