//! Subcommand implementations. Each one reads upstream artifacts by their
//! stable names, writes its own, and prints a one-line JSON summary.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use sbom_cascade::cascade::{
    compose_chains, project_chain, triage_report, CandidateChain, CascadeError, ProjectionResult,
    ReportFormat,
};
use sbom_cascade::corpus::{
    corpus_stats, cve_universe, fill_missing_years, load_chains, positive_pairs, read_pairs_csv,
    sample_negatives, write_pairs_csv, ChainRecord, CorpusError, SplitStrategy,
};
use sbom_cascade::graph::{
    build_graph, export_graph, import_graph, EvidenceGraph, FeatureSpec, GraphFormat,
    LeakagePolicy, Relation,
};
use sbom_cascade::hgat::{
    evaluate_hgat, hgat_gradcheck, train_hgat as run_train_hgat, EvalReport, HgatConfig,
    HgatError, MODEL_KIND_HGAT,
};
use sbom_cascade::ingest::{parse_cyclonedx, parse_report, EnrichedSbom, IngestReport};
use sbom_cascade::metrics::{split_sboms, MetricsError, SplitSets};
use sbom_cascade::nvd::{
    fetch_live, load_exploited_list, load_snapshot, write_snapshot, FetchConfig, MetaStore,
    NvdError,
};
use sbom_cascade::predictor::{
    mlp_gradcheck, read_ranking_csv, score_pairs, train_mlp as run_train_mlp, write_ranking_csv,
    PredictorError, MODEL_KIND_MLP,
};
use sbom_cascade::synth::{generate_synth_corpus, SynthSpec};
use sbom_cascade::tensor::{GradCheckReport, ModelCheckpoint};

use crate::config::RunConfig;
use crate::CliError;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

// --- shared helpers ---

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::runtime(format!("serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| CliError::runtime(format!("failed to write {}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("failed to read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("malformed {}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::runtime(format!("failed to create {}: {e}", path.display())))
}

/// Files in `dir` with a `.json` extension, sorted by filename.
fn json_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::input(format!("failed to read {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry =
            entry.map_err(|e| CliError::input(format!("failed to read {}: {e}", dir.display())))?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::input(format!(
            "no .json files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

/// Filename stem with `.json` (and a `.cdx` infix, if present) stripped.
fn sbom_stem(path: &Path) -> String {
    let name = path.file_name().unwrap_or_default().to_string_lossy();
    let name = name.strip_suffix(".json").unwrap_or(&name);
    name.strip_suffix(".cdx").unwrap_or(name).to_string()
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn sbom_dir(config: &RunConfig) -> Result<&Path, CliError> {
    config
        .paths
        .sbom_dir
        .as_deref()
        .ok_or_else(|| CliError::usage("no SBOM directory configured; set paths.sbom_dir or pass --sbom-dir"))
}

fn load_sboms(dir: &Path) -> Result<Vec<EnrichedSbom>, CliError> {
    let mut sboms = Vec::new();
    for path in json_files(dir)? {
        let bytes = fs::read(&path)
            .map_err(|e| CliError::input(format!("failed to read {}: {e}", path.display())))?;
        let sbom = parse_cyclonedx(&bytes)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
            .with_sbom_id(&sbom_stem(&path));
        sboms.push(sbom);
    }
    Ok(sboms)
}

fn load_store(config: &RunConfig) -> Result<MetaStore, CliError> {
    if config.paths.nvd_snapshots.is_empty() {
        return Err(CliError::usage(
            "no NVD snapshot configured; set paths.nvd_snapshots or pass --snapshot",
        ));
    }
    let mut store = load_snapshot(&config.paths.nvd_snapshots).map_err(nvd_err)?;
    if let Some(kev) = &config.paths.kev_list {
        let listed = load_exploited_list(kev).map_err(nvd_err)?;
        store.apply_exploited(&listed);
    }
    Ok(store)
}

fn graphs_path(config: &RunConfig) -> PathBuf {
    config.paths.output_dir.join("graphs")
}

fn load_graphs(dir: &Path) -> Result<Vec<EvidenceGraph>, CliError> {
    let mut graphs = Vec::new();
    for path in json_files(dir)? {
        let bytes = fs::read(&path)
            .map_err(|e| CliError::input(format!("failed to read {}: {e}", path.display())))?;
        let graph = import_graph(&bytes)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        graphs.push(graph);
    }
    Ok(graphs)
}

fn load_corpus(config: &RunConfig) -> Result<Vec<ChainRecord>, CliError> {
    let path = config.paths.chain_corpus.as_deref().ok_or_else(|| {
        CliError::usage("no chain corpus configured; set paths.chain_corpus or pass --corpus")
    })?;
    load_chains(path).map_err(corpus_err)
}

fn fold_graphs(graphs: &[EvidenceGraph], ids: &[String]) -> Result<Vec<EvidenceGraph>, CliError> {
    let by_id: BTreeMap<&str, &EvidenceGraph> =
        graphs.iter().map(|g| (g.sbom_id.as_str(), g)).collect();
    ids.iter()
        .map(|id| {
            by_id.get(id.as_str()).map(|&g| g.clone()).ok_or_else(|| {
                CliError::input(format!(
                    "splits.json names sbom {id:?} but no such graph exists; rerun build-graphs and split"
                ))
            })
        })
        .collect()
}

pub fn parse_policy(raw: &str) -> Result<LeakagePolicy, CliError> {
    match raw.to_ascii_uppercase().as_str() {
        "STRICT" => Ok(LeakagePolicy::Strict),
        "PAPER_LITERAL" => Ok(LeakagePolicy::PaperLiteral),
        other => Err(CliError::usage(format!(
            "unknown policy {other:?} (expected STRICT or PAPER_LITERAL)"
        ))),
    }
}

pub fn parse_fractions(raw: &str) -> Result<[f64; 3], CliError> {
    let parts: Vec<f64> = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::usage(format!("bad fractions {raw:?}: {e}")))?;
    let [train, val, test] = parts[..] else {
        return Err(CliError::usage(format!(
            "need exactly 3 comma-separated fractions, got {raw:?}"
        )));
    };
    Ok([train, val, test])
}

// --- error mapping ---

fn nvd_err(e: NvdError) -> CliError {
    match e {
        NvdError::NetworkError { .. } | NvdError::RateLimited { .. } => {
            CliError::runtime(e.to_string())
        }
        _ => CliError::input(e.to_string()),
    }
}

fn corpus_err(e: CorpusError) -> CliError {
    match e {
        CorpusError::InvalidRatio(_)
        | CorpusError::UnknownStrategy(_)
        | CorpusError::DegenerateSplit(_) => CliError::usage(e.to_string()),
        _ => CliError::input(e.to_string()),
    }
}

fn metrics_err(e: MetricsError) -> CliError {
    match e {
        MetricsError::InvalidFractions(_) => CliError::usage(e.to_string()),
        _ => CliError::input(e.to_string()),
    }
}

fn hgat_err(e: HgatError) -> CliError {
    match e {
        HgatError::InvalidConfig(_) => CliError::usage(e.to_string()),
        HgatError::Tensor(_) => CliError::runtime(e.to_string()),
        _ => CliError::input(e.to_string()),
    }
}

fn predictor_err(e: PredictorError) -> CliError {
    match e {
        PredictorError::InvalidConfig(_) => CliError::usage(e.to_string()),
        PredictorError::Tensor(_) | PredictorError::Io { .. } => CliError::runtime(e.to_string()),
        _ => CliError::input(e.to_string()),
    }
}

fn cascade_err(e: CascadeError) -> CliError {
    CliError::usage(e.to_string())
}

fn load_checkpoint(path: &Path, kind: &str) -> Result<ModelCheckpoint, CliError> {
    let ckpt = ModelCheckpoint::load(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    ckpt.expect_kind(kind)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(ckpt)
}

// --- subcommands ---

pub fn ingest(config: &RunConfig) -> Result<(), CliError> {
    let sboms = load_sboms(sbom_dir(config)?)?;
    let reports: BTreeMap<&str, IngestReport> = sboms
        .iter()
        .map(|s| (s.sbom_id.as_str(), parse_report(s)))
        .collect();
    let out = config.paths.output_dir.join("ingest_report.json");
    write_json(&out, &reports)?;
    let components: usize = reports.values().map(|r| r.components).sum();
    let findings: usize = reports.values().map(|r| r.findings).sum();
    println!(
        "{}",
        json!({ "sboms": sboms.len(), "components": components, "findings": findings })
    );
    Ok(())
}

pub fn build_graphs(config: &RunConfig) -> Result<(), CliError> {
    let sboms = load_sboms(sbom_dir(config)?)?;
    let store = load_store(config)?;
    let spec = FeatureSpec {
        leakage_policy: config.hgat.leakage_policy,
    };
    let dir = graphs_path(config);
    ensure_dir(&dir)?;
    for sbom in &sboms {
        let graph = build_graph(sbom, &store, &spec);
        let bytes = export_graph(&graph, GraphFormat::Json)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        let path = dir.join(format!("{}.json", file_safe(&graph.sbom_id)));
        fs::write(&path, bytes)
            .map_err(|e| CliError::runtime(format!("failed to write {}: {e}", path.display())))?;
    }
    println!(
        "{}",
        json!({ "graphs": sboms.len(), "dir": dir.to_string_lossy() })
    );
    Ok(())
}

pub fn split(config: &RunConfig) -> Result<(), CliError> {
    let graphs = load_graphs(&graphs_path(config))?;
    let mut ids: Vec<String> = graphs.into_iter().map(|g| g.sbom_id).collect();
    ids.sort();
    let sets = split_sboms(&ids, config.split.fractions, config.seed).map_err(metrics_err)?;
    write_json(&config.paths.output_dir.join("splits.json"), &sets)?;
    println!(
        "{}",
        json!({ "train": sets.train.len(), "val": sets.val.len(), "test": sets.test.len() })
    );
    Ok(())
}

pub fn train_hgat(config: &RunConfig) -> Result<(), CliError> {
    let graphs = load_graphs(&graphs_path(config))?;
    let sets: SplitSets = read_json(&config.paths.output_dir.join("splits.json"))?;
    let train = fold_graphs(&graphs, &sets.train)?;
    let val = fold_graphs(&graphs, &sets.val)?;
    let outcome = run_train_hgat(&train, &val, &config.hgat).map_err(hgat_err)?;
    let path = config.paths.output_dir.join("hgat.ckpt.json");
    outcome
        .checkpoint
        .save(&path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    println!(
        "{}",
        json!({
            "epochs": outcome.history.len(),
            "best_epoch": outcome.best_epoch,
            "best_val_f1": outcome.best_val_f1,
            "checkpoint": path.to_string_lossy(),
        })
    );
    Ok(())
}

#[derive(Serialize)]
struct HgatMetricsDoc {
    fold: String,
    mask_relation: Option<String>,
    #[serde(flatten)]
    report: EvalReport,
}

pub fn eval_hgat(
    config: &RunConfig,
    checkpoint: Option<PathBuf>,
    fold: Option<&str>,
    mask_relation: Option<&str>,
) -> Result<(), CliError> {
    let fold = fold.unwrap_or("test").to_ascii_lowercase();
    if !matches!(fold.as_str(), "train" | "val" | "test") {
        return Err(CliError::usage(format!(
            "unknown fold {fold:?} (expected train, val, or test)"
        )));
    }
    let mask = mask_relation
        .map(|r| Relation::parse(&r.to_ascii_uppercase()))
        .transpose()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let path = checkpoint.unwrap_or_else(|| config.paths.output_dir.join("hgat.ckpt.json"));
    let ckpt = load_checkpoint(&path, MODEL_KIND_HGAT)?;
    let graphs = load_graphs(&graphs_path(config))?;
    let sets: SplitSets = read_json(&config.paths.output_dir.join("splits.json"))?;
    let ids = match fold.as_str() {
        "train" => &sets.train,
        "val" => &sets.val,
        _ => &sets.test,
    };
    let selected = fold_graphs(&graphs, ids)?;
    let report = evaluate_hgat(&ckpt, &selected, mask).map_err(hgat_err)?;
    let doc = HgatMetricsDoc {
        fold,
        mask_relation: mask.map(|r| r.as_str().to_string()),
        report,
    };
    write_json(&config.paths.output_dir.join("metrics_hgat.json"), &doc)?;
    println!(
        "{}",
        serde_json::to_value(&doc).expect("metrics serialize")
    );
    Ok(())
}

pub fn pairs(config: &RunConfig) -> Result<(), CliError> {
    let chains = load_corpus(config)?;
    let positives = positive_pairs(&chains);
    let negatives =
        sample_negatives(&chains, config.negative_ratio, config.seed).map_err(corpus_err)?;
    let mut examples = positives;
    let positive_count = examples.len();
    examples.extend(negatives);
    let path = config.paths.output_dir.join("pairs.csv");
    write_pairs_csv(&examples, &path).map_err(corpus_err)?;
    let stats = corpus_stats(&chains);
    println!(
        "{}",
        json!({
            "chains": stats.count,
            "positives": positive_count,
            "negatives": examples.len() - positive_count,
            "length": stats.length,
        })
    );
    Ok(())
}

pub fn train_mlp(config: &RunConfig) -> Result<(), CliError> {
    let examples = read_pairs_csv(&config.paths.output_dir.join("pairs.csv")).map_err(corpus_err)?;
    let mut chains = load_corpus(config)?;
    let store = load_store(config)?;
    fill_missing_years(&mut chains, &store);
    let strategy = SplitStrategy::parse(&config.split.strategy).map_err(corpus_err)?;
    let split = sbom_cascade::corpus::split_pairs(
        &examples,
        &chains,
        strategy,
        config.split.fractions,
        config.seed,
    )
    .map_err(corpus_err)?;
    let outcome = run_train_mlp(&split.train, &split.val, &store, &config.mlp)
        .map_err(predictor_err)?;
    let path = config.paths.output_dir.join("mlp.ckpt.json");
    outcome
        .checkpoint
        .save(&path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    println!(
        "{}",
        json!({
            "epochs": outcome.history.len(),
            "best_epoch": outcome.best_epoch,
            "best_val_auc": outcome.best_val_auc,
            "checkpoint": path.to_string_lossy(),
        })
    );
    Ok(())
}

pub fn rank(
    config: &RunConfig,
    checkpoint: Option<PathBuf>,
    pairs_path: Option<PathBuf>,
) -> Result<(), CliError> {
    let ckpt_path = checkpoint.unwrap_or_else(|| config.paths.output_dir.join("mlp.ckpt.json"));
    let ckpt = load_checkpoint(&ckpt_path, MODEL_KIND_MLP)?;
    let pairs_path = pairs_path.unwrap_or_else(|| config.paths.output_dir.join("pairs.csv"));
    let examples = read_pairs_csv(&pairs_path).map_err(corpus_err)?;
    let store = load_store(config)?;
    let ranked = score_pairs(&ckpt, &examples, &store).map_err(predictor_err)?;
    let out = config.paths.output_dir.join("ranking.csv");
    write_ranking_csv(&ranked, &out).map_err(predictor_err)?;
    println!(
        "{}",
        json!({ "pairs": ranked.len(), "ranking": out.to_string_lossy() })
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ChainsDoc {
    tau: f64,
    max_len: usize,
    chains: Vec<CandidateChain>,
}

pub fn compose(config: &RunConfig, ranking: Option<PathBuf>) -> Result<(), CliError> {
    let path = ranking.unwrap_or_else(|| config.paths.output_dir.join("ranking.csv"));
    let ranked = read_ranking_csv(&path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let chains =
        compose_chains(&ranked, config.tau, config.max_chain_len).map_err(cascade_err)?;
    let doc = ChainsDoc {
        tau: config.tau,
        max_len: config.max_chain_len,
        chains,
    };
    write_json(&config.paths.output_dir.join("chains.json"), &doc)?;
    println!("{}", json!({ "chains": doc.chains.len(), "tau": doc.tau }));
    Ok(())
}

pub fn project(
    config: &RunConfig,
    chains: Option<PathBuf>,
    graphs_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let chains_path = chains.unwrap_or_else(|| config.paths.output_dir.join("chains.json"));
    let doc: ChainsDoc = read_json(&chains_path)?;
    let graphs = load_graphs(&graphs_dir.unwrap_or_else(|| graphs_path(config)))?;
    let dir = config.paths.output_dir.join("projections");
    ensure_dir(&dir)?;
    for graph in &graphs {
        let projections: Vec<ProjectionResult> = doc
            .chains
            .iter()
            .map(|c| project_chain(&c.cve_ids, graph))
            .collect();
        write_json(
            &dir.join(format!("{}.json", file_safe(&graph.sbom_id))),
            &projections,
        )?;
    }
    println!(
        "{}",
        json!({ "sboms": graphs.len(), "chains": doc.chains.len(), "dir": dir.to_string_lossy() })
    );
    Ok(())
}

pub fn report(config: &RunConfig) -> Result<(), CliError> {
    let doc: ChainsDoc = read_json(&config.paths.output_dir.join("chains.json"))?;
    // The report focuses on the top chains that land on at least one
    // component; the full per-SBOM detail stays in projections/.
    let top_ids: BTreeSet<String> = doc
        .chains
        .iter()
        .take(config.top_k)
        .map(|c| c.cve_ids.join("->"))
        .collect();
    let mut projections = Vec::new();
    for path in json_files(&config.paths.output_dir.join("projections"))? {
        let per_sbom: Vec<ProjectionResult> = read_json(&path)?;
        projections.extend(
            per_sbom
                .into_iter()
                .filter(|p| top_ids.contains(&p.chain_id) && !p.induced_nodes.is_empty()),
        );
    }
    let mut written = Vec::new();
    for (format, ext) in [
        (ReportFormat::Json, "json"),
        (ReportFormat::Text, "txt"),
        (ReportFormat::Dot, "dot"),
    ] {
        let bytes = triage_report(&projections, &doc.chains, format, config.top_k)
            .map_err(cascade_err)?;
        let path = config.paths.output_dir.join(format!("report.{ext}"));
        fs::write(&path, bytes)
            .map_err(|e| CliError::runtime(format!("failed to write {}: {e}", path.display())))?;
        written.push(path.to_string_lossy().into_owned());
    }
    println!(
        "{}",
        json!({ "chains": doc.chains.len(), "projections": projections.len(), "files": written })
    );
    Ok(())
}

#[derive(Debug, Default)]
pub struct SynthOverrides {
    pub graphs: Option<usize>,
    pub components_min: Option<usize>,
    pub components_max: Option<usize>,
    pub density: Option<f64>,
    pub seed_fraction: Option<f64>,
    pub rule: Option<String>,
}

pub fn synth(config: &RunConfig, overrides: SynthOverrides) -> Result<(), CliError> {
    let mut spec = SynthSpec {
        seed: config.seed,
        ..SynthSpec::default()
    };
    if let Some(graphs) = overrides.graphs {
        spec.graphs = graphs;
    }
    if let Some(min) = overrides.components_min {
        spec.components_min = min;
    }
    if let Some(max) = overrides.components_max {
        spec.components_max = max;
    }
    if let Some(density) = overrides.density {
        spec.density = density;
    }
    if let Some(fraction) = overrides.seed_fraction {
        spec.seed_fraction = fraction;
    }
    if let Some(rule) = overrides.rule {
        spec.rule = rule;
    }
    let outcome = generate_synth_corpus(&spec).map_err(|e| CliError::usage(e.to_string()))?;
    let dir = graphs_path(config);
    ensure_dir(&dir)?;
    for graph in &outcome.graphs {
        let bytes = export_graph(graph, GraphFormat::Json)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        let path = dir.join(format!("{}.json", file_safe(&graph.sbom_id)));
        fs::write(&path, bytes)
            .map_err(|e| CliError::runtime(format!("failed to write {}: {e}", path.display())))?;
    }
    write_json(
        &config.paths.output_dir.join("synth_manifest.json"),
        &outcome.manifest,
    )?;
    let snapshot_path = config.paths.output_dir.join("synth_snapshot.json");
    write_snapshot(&outcome.meta_store, &snapshot_path).map_err(nvd_err)?;
    println!(
        "{}",
        json!({
            "graphs": outcome.graphs.len(),
            "corpus_digest": outcome.manifest.corpus_digest,
            "dir": dir.to_string_lossy(),
        })
    );
    Ok(())
}

/// Three components, two CVEs, one CWE: every node type and relation is
/// exercised, so the check covers each message channel.
fn gradcheck_graph() -> Result<EvidenceGraph, CliError> {
    use sbom_cascade::ingest::{ComponentRecord, DependencyRelation, VulnFinding};
    use sbom_cascade::nvd::{CveMeta, Severity};

    let components = ["alpha", "beta", "gamma"]
        .iter()
        .map(|n| ComponentRecord {
            component_id: n.to_string(),
            name: n.to_string(),
            version: "1.0.0".to_string(),
            purl: None,
            licenses: vec!["MIT".to_string()],
        })
        .collect();
    // alpha has two dependency neighbors and gamma two CVE neighbors, so the
    // node-level attention softmax is non-degenerate for both relations.
    let dependencies = vec![
        DependencyRelation {
            from_id: "alpha".into(),
            to_id: "beta".into(),
        },
        DependencyRelation {
            from_id: "alpha".into(),
            to_id: "gamma".into(),
        },
        DependencyRelation {
            from_id: "beta".into(),
            to_id: "gamma".into(),
        },
    ];
    let findings = vec![
        VulnFinding {
            component_id: "beta".into(),
            cve_id: "CVE-2021-0001".into(),
            severity_hint: Some("HIGH".into()),
            cvss_hint: Some(8.1),
            cwe_ids: vec!["CWE-79".into()],
        },
        VulnFinding {
            component_id: "gamma".into(),
            cve_id: "CVE-2021-0001".into(),
            severity_hint: Some("HIGH".into()),
            cvss_hint: Some(8.1),
            cwe_ids: vec!["CWE-79".into()],
        },
        VulnFinding {
            component_id: "gamma".into(),
            cve_id: "CVE-2019-0002".into(),
            severity_hint: Some("MEDIUM".into()),
            cvss_hint: Some(5.4),
            cwe_ids: Vec::new(),
        },
    ];
    let mut store = MetaStore::empty();
    store.insert(CveMeta {
        cve_id: "CVE-2021-0001".into(),
        cvss_base: 8.1,
        severity: Severity::High,
        published_year: 2021,
        exploited: true,
        reference_count: 12,
        cwe_ids: vec!["CWE-79".into()],
    });
    store.insert(CveMeta {
        cve_id: "CVE-2019-0002".into(),
        cvss_base: 5.4,
        severity: Severity::Medium,
        published_year: 2019,
        exploited: false,
        reference_count: 3,
        cwe_ids: Vec::new(),
    });
    let sbom = EnrichedSbom::assemble("gradcheck-toy", components, dependencies, findings)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(build_graph(&sbom, &store, &FeatureSpec::paper_literal()))
}

#[derive(Serialize)]
struct GradcheckDoc {
    tolerance: f64,
    passed: bool,
    hgat: GradCheckReport,
    mlp: GradCheckReport,
}

pub fn gradcheck(config: &RunConfig, samples: usize) -> Result<(), CliError> {
    let graph = gradcheck_graph()?;
    let hgat_config = HgatConfig {
        leakage_policy: LeakagePolicy::PaperLiteral,
        ..config.hgat
    };
    let hgat = hgat_gradcheck(&hgat_config, &[graph], samples, config.seed).map_err(hgat_err)?;
    let mlp = mlp_gradcheck(samples.max(4), config.seed).map_err(predictor_err)?;
    let passed =
        hgat.max_rel_error < GRADCHECK_TOLERANCE && mlp.max_rel_error < GRADCHECK_TOLERANCE;
    let doc = GradcheckDoc {
        tolerance: GRADCHECK_TOLERANCE,
        passed,
        hgat,
        mlp,
    };
    write_json(&config.paths.output_dir.join("gradcheck.json"), &doc)?;
    println!(
        "{}",
        json!({
            "hgat_max_rel_error": doc.hgat.max_rel_error,
            "mlp_max_rel_error": doc.mlp.max_rel_error,
            "passed": passed,
        })
    );
    if !passed {
        return Err(CliError::runtime(format!(
            "gradient check failed: hgat {:.3e}, mlp {:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})",
            doc.hgat.max_rel_error, doc.mlp.max_rel_error
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn fetch_nvd(
    config: &RunConfig,
    ids: Option<&str>,
    from_corpus: bool,
    out: Option<PathBuf>,
    base_url: Option<String>,
    interval_ms: Option<u64>,
    id_filter: bool,
) -> Result<(), CliError> {
    let mut cve_ids: Vec<String> = ids
        .map(|list| {
            list.split(',')
                .map(|id| id.trim().to_string())
                .filter(|id| !id.is_empty())
                .collect()
        })
        .unwrap_or_default();
    if from_corpus {
        let chains = load_corpus(config)?;
        cve_ids.extend(cve_universe(&chains));
    }
    cve_ids.sort();
    cve_ids.dedup();
    if cve_ids.is_empty() {
        return Err(CliError::usage(
            "no CVE ids to fetch; pass --ids or --from-corpus",
        ));
    }
    let mut fetch_config = FetchConfig::default();
    if let Some(url) = base_url {
        fetch_config.base_url = url;
    }
    if let Some(ms) = interval_ms {
        fetch_config.request_interval_ms = ms;
    }
    fetch_config.supports_id_filter = id_filter;
    let out = out.unwrap_or_else(|| config.paths.output_dir.join("nvd_snapshot.json"));
    let written = fetch_live(&cve_ids, &fetch_config, &out).map_err(nvd_err)?;
    println!(
        "{}",
        json!({ "requested": cve_ids.len(), "written": written, "path": out.to_string_lossy() })
    );
    Ok(())
}
