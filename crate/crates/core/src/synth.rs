//! Synthetic corpus generator with a planted labeling rule.
//!
//! Each graph is a random digraph of components (out-degree capped at 3,
//! targets drawn uniformly so degree is nearly constant across nodes). A
//! sampled seed subset receives synthetic CVE findings, and the planted rule
//! `VULN_VIA_DEP` labels a component positive iff at least one of its direct
//! dependencies is a seed. Features are built STRICT and degree columns carry
//! no label information by construction, so the label is recoverable only
//! through dependency message passing — which is exactly what the generator
//! exists to probe.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{build_graph, export_graph, EvidenceGraph, FeatureSpec, GraphFormat};
use crate::ingest::{ComponentRecord, DependencyRelation, EnrichedSbom, VulnFinding};
use crate::nvd::{hex_digest, CveMeta, MetaStore, Severity};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RULE_VULN_VIA_DEP: &str = "VULN_VIA_DEP";
pub const LABEL_KIND_PLANTED: &str = "planted:VULN_VIA_DEP";

const MAX_OUT_DEGREE: usize = 3;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("unknown planted rule `{0}`")]
    UnknownRule(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub graphs: usize,
    pub components_min: usize,
    pub components_max: usize,
    /// Probability of each candidate forward edge, subject to the out-degree
    /// cap. Zero is allowed and produces edge-free graphs.
    pub density: f64,
    pub seed_fraction: f64,
    pub rule: String,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> SynthSpec {
        SynthSpec {
            graphs: 80,
            components_min: 10,
            components_max: 16,
            density: 0.45,
            seed_fraction: 0.15,
            rule: RULE_VULN_VIA_DEP.to_string(),
            seed: 11,
        }
    }
}

fn validate_spec(spec: &SynthSpec) -> Result<(), SynthError> {
    if spec.rule != RULE_VULN_VIA_DEP {
        return Err(SynthError::UnknownRule(spec.rule.clone()));
    }
    if spec.graphs == 0 {
        return Err(SynthError::InvalidSpec("graph count must be positive".into()));
    }
    if spec.components_min == 0 || spec.components_min > spec.components_max {
        return Err(SynthError::InvalidSpec(format!(
            "component range {}..={} is degenerate",
            spec.components_min, spec.components_max
        )));
    }
    if !(0.0..1.0).contains(&spec.density) {
        return Err(SynthError::InvalidSpec(format!(
            "density must be in [0,1), got {}",
            spec.density
        )));
    }
    if !(spec.seed_fraction > 0.0 && spec.seed_fraction < 1.0) {
        return Err(SynthError::InvalidSpec(format!(
            "seed fraction must be in (0,1), got {}",
            spec.seed_fraction
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphManifest {
    pub sbom_id: String,
    pub components: usize,
    pub dependency_edges: usize,
    /// Component ids drawn into the vulnerable seed set.
    pub seeds: Vec<String>,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub rule: String,
    pub seed: u64,
    pub graph_count: usize,
    /// SHA-256 over the concatenated JSON exports of every graph.
    pub corpus_digest: String,
    pub graphs: Vec<GraphManifest>,
}

#[derive(Debug)]
pub struct SynthOutcome {
    pub graphs: Vec<EvidenceGraph>,
    pub meta_store: MetaStore,
    pub manifest: SynthManifest,
}

fn synthetic_meta(cve_id: &str) -> CveMeta {
    CveMeta {
        cve_id: cve_id.to_string(),
        cvss_base: 7.5,
        severity: Severity::High,
        published_year: 2020,
        exploited: false,
        reference_count: 10,
        cwe_ids: vec!["CWE-79".to_string()],
    }
}

/// Generates the corpus: graphs with planted labels, the metadata store
/// backing their CVE features, and a manifest with per-graph ground truth.
pub fn generate_synth_corpus(spec: &SynthSpec) -> Result<SynthOutcome, SynthError> {
    validate_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut store = MetaStore::empty();
    let mut graphs = Vec::with_capacity(spec.graphs);
    let mut graph_manifests = Vec::with_capacity(spec.graphs);
    let mut hasher = Sha256::new();
    let mut cve_counter = 0usize;

    for g in 0..spec.graphs {
        let n = rng.random_range(spec.components_min..=spec.components_max);
        let sbom_id = format!("synth-{g:03}");
        let components: Vec<ComponentRecord> = (0..n)
            .map(|i| ComponentRecord {
                component_id: format!("pkg-{i:02}"),
                name: format!("pkg-{i:02}"),
                version: format!("1.{i}.0"),
                purl: None,
                licenses: if i % 2 == 0 { vec!["MIT".to_string()] } else { Vec::new() },
            })
            .collect();

        let mut dependencies = Vec::new();
        for i in 0..n {
            let mut candidates: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            candidates.shuffle(&mut rng);
            let mut targets = Vec::new();
            for j in candidates {
                if targets.len() >= MAX_OUT_DEGREE {
                    break;
                }
                if spec.density > 0.0 && rng.random_bool(spec.density) {
                    targets.push(j);
                }
            }
            targets.sort_unstable();
            for j in targets {
                dependencies.push(DependencyRelation {
                    from_id: components[i].component_id.clone(),
                    to_id: components[j].component_id.clone(),
                });
            }
        }

        let seed_count = ((spec.seed_fraction * n as f64).round() as usize).max(1);
        let mut seed_indices: Vec<usize> =
            rand::seq::index::sample(&mut rng, n, seed_count.min(n)).into_vec();
        seed_indices.sort_unstable();
        let seeds: Vec<String> = seed_indices
            .iter()
            .map(|&i| components[i].component_id.clone())
            .collect();

        let findings: Vec<VulnFinding> = seed_indices
            .iter()
            .map(|&i| {
                let cve_id = format!("CVE-2098-{:04}", cve_counter);
                cve_counter += 1;
                store.insert(synthetic_meta(&cve_id));
                VulnFinding {
                    component_id: components[i].component_id.clone(),
                    cve_id,
                    severity_hint: Some("HIGH".to_string()),
                    cvss_hint: Some(7.5),
                    cwe_ids: vec!["CWE-79".to_string()],
                }
            })
            .collect();

        let sbom = EnrichedSbom::assemble(&sbom_id, components, dependencies, findings)
            .expect("generated sbom satisfies invariants");
        let mut graph = build_graph(&sbom, &store, &FeatureSpec::strict());
        graph.label_kind = LABEL_KIND_PLANTED.to_string();
        graph.labels = plant_labels(&graph, &seed_indices);
        let positives = graph.labels.iter().filter(|&&l| l == 1).count();

        let bytes = export_graph(&graph, GraphFormat::Json).expect("graph exports");
        hasher.update(&bytes);
        graph_manifests.push(GraphManifest {
            sbom_id,
            components: graph.component_ids.len(),
            dependency_edges: graph.depends_on.len(),
            seeds,
            positives,
        });
        graphs.push(graph);
    }

    let manifest = SynthManifest {
        rule: spec.rule.clone(),
        seed: spec.seed,
        graph_count: spec.graphs,
        corpus_digest: hex_digest(&hasher.finalize()),
        graphs: graph_manifests,
    };
    Ok(SynthOutcome {
        graphs,
        meta_store: store,
        manifest,
    })
}

/// VULN_VIA_DEP: positive iff the component has at least one direct
/// dependency in the seed set.
fn plant_labels(graph: &EvidenceGraph, seed_indices: &[usize]) -> Vec<u8> {
    let mut labels = vec![0u8; graph.component_ids.len()];
    for &(from, to) in &graph.depends_on {
        if seed_indices.contains(&to) {
            labels[from] = 1;
        }
    }
    labels
}
