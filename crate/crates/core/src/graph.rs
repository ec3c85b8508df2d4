//! Heterogeneous evidence graphs built from an enriched SBOM plus CVE
//! metadata.
//!
//! Three node types (component, CVE, CWE) and three relations:
//! `DEPENDS_ON` (component→component), `HAS_VULNERABILITY` (component→CVE),
//! `HAS_CWE` (CVE→CWE). Node feature layouts are fixed per type; the
//! [`LeakagePolicy`] decides whether vulnerability-derived component columns
//! are visible (`PaperLiteral`) or zeroed (`Strict`) so the has-any-CVE task
//! cannot read its own label out of the features.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{direct_dependency_set, DependencyKind, EnrichedSbom};
use crate::nvd::{CveMeta, MetaStore, Severity};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown relation {0:?} (expected DEPENDS_ON, HAS_VULNERABILITY, or HAS_CWE)")]
    UnknownRelation(String),
    #[error("unknown export format {0:?} (expected DOT or JSON)")]
    UnknownFormat(String),
    #[error("malformed graph: {0}")]
    MalformedGraph(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Relation {
    DependsOn,
    HasVulnerability,
    HasCwe,
}

impl Relation {
    pub const ALL: [Relation; 3] = [
        Relation::DependsOn,
        Relation::HasVulnerability,
        Relation::HasCwe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::DependsOn => "DEPENDS_ON",
            Relation::HasVulnerability => "HAS_VULNERABILITY",
            Relation::HasCwe => "HAS_CWE",
        }
    }

    pub fn parse(s: &str) -> Result<Relation, GraphError> {
        match s {
            "DEPENDS_ON" => Ok(Relation::DependsOn),
            "HAS_VULNERABILITY" => Ok(Relation::HasVulnerability),
            "HAS_CWE" => Ok(Relation::HasCwe),
            other => Err(GraphError::UnknownRelation(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeakagePolicy {
    #[serde(rename = "STRICT")]
    Strict,
    #[serde(rename = "PAPER_LITERAL")]
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    ZScore,
    Identity,
}

/// Name and normalization mode for one feature column.
#[derive(Debug, Clone, Copy)]
pub struct ColumnSpec {
    pub name: &'static str,
    pub norm: NormMode,
}

const fn z(name: &'static str) -> ColumnSpec {
    ColumnSpec {
        name,
        norm: NormMode::ZScore,
    }
}

const fn ident(name: &'static str) -> ColumnSpec {
    ColumnSpec {
        name,
        norm: NormMode::Identity,
    }
}

pub const COMPONENT_COLUMNS: [ColumnSpec; 12] = [
    z("max_cvss"),
    z("mean_cvss"),
    z("cve_count"),
    ident("max_severity_low"),
    ident("max_severity_medium"),
    ident("max_severity_high"),
    ident("max_severity_critical"),
    ident("is_direct"),
    z("out_degree"),
    z("in_degree"),
    ident("license_known"),
    z("license_count"),
];

pub const CVE_COLUMNS: [ColumnSpec; 7] = [
    z("cvss_base"),
    ident("cvss_bin_0_4"),
    ident("cvss_bin_4_7"),
    ident("cvss_bin_7_9"),
    ident("cvss_bin_9_10"),
    z("recency"),
    ident("exploited"),
];

pub const CWE_COLUMNS: [ColumnSpec; 1] = [z("mapped_cve_ratio")];

/// Fixed per-type column layouts plus the leakage policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpec {
    pub leakage_policy: LeakagePolicy,
}

impl FeatureSpec {
    pub fn strict() -> FeatureSpec {
        FeatureSpec {
            leakage_policy: LeakagePolicy::Strict,
        }
    }

    pub fn paper_literal() -> FeatureSpec {
        FeatureSpec {
            leakage_policy: LeakagePolicy::PaperLiteral,
        }
    }

    pub fn columns(node_type: NodeType) -> &'static [ColumnSpec] {
        match node_type {
            NodeType::Component => &COMPONENT_COLUMNS,
            NodeType::Cve => &CVE_COLUMNS,
            NodeType::Cwe => &CWE_COLUMNS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeType {
    Component,
    Cve,
    Cwe,
}

/// Label provenance marker for the component labels stored on a graph.
pub const LABEL_KIND_HAS_ANY_CVE: &str = "has_any_cve";

/// One SBOM's evidence graph: typed node tables with contiguous indices,
/// per-relation edge lists, per-type feature matrices, component labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceGraph {
    pub sbom_id: String,
    pub label_kind: String,
    pub leakage_policy: LeakagePolicy,
    pub component_ids: Vec<String>,
    pub cve_ids: Vec<String>,
    pub cwe_ids: Vec<String>,
    pub depends_on: Vec<(usize, usize)>,
    pub has_vulnerability: Vec<(usize, usize)>,
    pub has_cwe: Vec<(usize, usize)>,
    pub component_features: Vec<Vec<f64>>,
    pub cve_features: Vec<Vec<f64>>,
    pub cwe_features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl EvidenceGraph {
    pub fn edges(&self, relation: Relation) -> &[(usize, usize)] {
        match relation {
            Relation::DependsOn => &self.depends_on,
            Relation::HasVulnerability => &self.has_vulnerability,
            Relation::HasCwe => &self.has_cwe,
        }
    }

    pub fn node_count(&self, node_type: NodeType) -> usize {
        match node_type {
            NodeType::Component => self.component_ids.len(),
            NodeType::Cve => self.cve_ids.len(),
            NodeType::Cwe => self.cwe_ids.len(),
        }
    }

    pub fn total_nodes(&self) -> usize {
        self.component_ids.len() + self.cve_ids.len() + self.cwe_ids.len()
    }
}

/// Builds the evidence graph for one SBOM. CVE and CWE nodes are
/// deduplicated and sorted by id; components keep SBOM document order; edge
/// lists are sorted. Degenerate SBOMs produce valid degenerate graphs.
pub fn build_graph(sbom: &EnrichedSbom, store: &MetaStore, spec: &FeatureSpec) -> EvidenceGraph {
    let component_index: BTreeMap<&str, usize> = sbom
        .components
        .iter()
        .enumerate()
        .map(|(i, c)| (c.component_id.as_str(), i))
        .collect();

    let cve_ids: Vec<String> = sbom
        .findings
        .iter()
        .map(|f| f.cve_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let cve_index: BTreeMap<&str, usize> = cve_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let cwe_ids: Vec<String> = cve_ids
        .iter()
        .filter_map(|id| store.lookup(id))
        .flat_map(|meta| meta.cwe_ids.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let cwe_index: BTreeMap<&str, usize> = cwe_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut depends_on: Vec<(usize, usize)> = sbom
        .dependencies
        .iter()
        .map(|d| (component_index[d.from_id.as_str()], component_index[d.to_id.as_str()]))
        .collect();
    depends_on.sort_unstable();

    let mut has_vulnerability: Vec<(usize, usize)> = sbom
        .findings
        .iter()
        .map(|f| (component_index[f.component_id.as_str()], cve_index[f.cve_id.as_str()]))
        .collect();
    has_vulnerability.sort_unstable();

    let mut has_cwe: Vec<(usize, usize)> = Vec::new();
    for (ci, cve_id) in cve_ids.iter().enumerate() {
        if let Some(meta) = store.lookup(cve_id) {
            for cwe in &meta.cwe_ids {
                has_cwe.push((ci, cwe_index[cwe.as_str()]));
            }
        }
    }
    has_cwe.sort_unstable();

    let mut labels = vec![0u8; sbom.components.len()];
    for &(comp, _) in &has_vulnerability {
        labels[comp] = 1;
    }

    let mut graph = EvidenceGraph {
        sbom_id: sbom.sbom_id.clone(),
        label_kind: LABEL_KIND_HAS_ANY_CVE.to_string(),
        leakage_policy: spec.leakage_policy,
        component_ids: sbom.components.iter().map(|c| c.component_id.clone()).collect(),
        cve_ids,
        cwe_ids,
        depends_on,
        has_vulnerability,
        has_cwe,
        component_features: Vec::new(),
        cve_features: Vec::new(),
        cwe_features: Vec::new(),
        labels,
    };
    graph.component_features = component_features(sbom, store, &graph, spec);
    graph.cve_features = cve_features(store, &graph);
    graph.cwe_features = cwe_features(&graph);
    graph
}

/// Component rows: [max_cvss, mean_cvss, cve_count, max-severity one-hot (4),
/// is_direct, out_degree, in_degree, license_known, license_count].
/// Under `Strict` the first 8 (vulnerability-derived) columns are zeroed.
pub fn component_features(
    sbom: &EnrichedSbom,
    store: &MetaStore,
    graph: &EvidenceGraph,
    spec: &FeatureSpec,
) -> Vec<Vec<f64>> {
    let n = graph.component_ids.len();
    let mut cves_of: Vec<Vec<&str>> = vec![Vec::new(); n];
    for &(comp, cve) in &graph.has_vulnerability {
        cves_of[comp].push(graph.cve_ids[cve].as_str());
    }
    let mut out_degree = vec![0usize; n];
    let mut in_degree = vec![0usize; n];
    for &(from, to) in &graph.depends_on {
        out_degree[from] += 1;
        in_degree[to] += 1;
    }
    let kinds = direct_dependency_set(sbom);

    let mut rows = Vec::with_capacity(n);
    for (i, component) in sbom.components.iter().enumerate() {
        let metas: Vec<CveMeta> = cves_of[i]
            .iter()
            .map(|id| store.lookup(id).cloned().unwrap_or_else(|| CveMeta::absent(id)))
            .collect();
        let (max_cvss, mean_cvss) = if metas.is_empty() {
            (0.0, 0.0)
        } else {
            let max = metas.iter().map(|m| m.cvss_base).fold(f64::NEG_INFINITY, f64::max);
            let mean = metas.iter().map(|m| m.cvss_base).sum::<f64>() / metas.len() as f64;
            (max, mean)
        };
        let max_severity = metas
            .iter()
            .map(|m| m.severity)
            .max()
            .unwrap_or(Severity::Unknown);
        let severity_hot = max_severity.one_hot();
        let is_direct = match kinds.get(&component.component_id) {
            Some(DependencyKind::Direct) => 1.0,
            _ => 0.0,
        };
        let license_known = if component.licenses.is_empty() { 0.0 } else { 1.0 };

        let mut row = vec![
            max_cvss,
            mean_cvss,
            metas.len() as f64,
            severity_hot[0],
            severity_hot[1],
            severity_hot[2],
            severity_hot[3],
            is_direct,
            out_degree[i] as f64,
            in_degree[i] as f64,
            license_known,
            component.licenses.len() as f64,
        ];
        if spec.leakage_policy == LeakagePolicy::Strict {
            for value in row.iter_mut().take(8) {
                *value = 0.0;
            }
        }
        rows.push(row);
    }
    rows
}

fn cvss_bin_one_hot(cvss: f64) -> [f64; 4] {
    let mut hot = [0.0; 4];
    let bin = if cvss < 4.0 {
        0
    } else if cvss < 7.0 {
        1
    } else if cvss < 9.0 {
        2
    } else {
        3
    };
    hot[bin] = 1.0;
    hot
}

/// CVE rows: [cvss_base, cvss-bin one-hot over {[0,4), [4,7), [7,9), [9,10]},
/// recency = clamp((published_year − 2000)/30, 0, 1), exploited].
pub fn cve_features(store: &MetaStore, graph: &EvidenceGraph) -> Vec<Vec<f64>> {
    graph
        .cve_ids
        .iter()
        .map(|id| {
            let meta = store.lookup(id).cloned().unwrap_or_else(|| CveMeta::absent(id));
            let bin = cvss_bin_one_hot(meta.cvss_base);
            let recency = ((meta.published_year as f64 - 2000.0) / 30.0).clamp(0.0, 1.0);
            vec![
                meta.cvss_base,
                bin[0],
                bin[1],
                bin[2],
                bin[3],
                recency,
                if meta.exploited { 1.0 } else { 0.0 },
            ]
        })
        .collect()
}

/// CWE rows: [mapped_cve_count / max(1, total CVE nodes)].
pub fn cwe_features(graph: &EvidenceGraph) -> Vec<Vec<f64>> {
    let mut mapped = vec![0usize; graph.cwe_ids.len()];
    for &(_, cwe) in &graph.has_cwe {
        mapped[cwe] += 1;
    }
    let denom = graph.cve_ids.len().max(1) as f64;
    mapped.iter().map(|&count| vec![count as f64 / denom]).collect()
}

/// Returns a copy of the graph with the named relation's edge list emptied;
/// features and labels are untouched.
pub fn mask_edge_type(graph: &EvidenceGraph, relation: Relation) -> EvidenceGraph {
    let mut masked = graph.clone();
    match relation {
        Relation::DependsOn => masked.depends_on.clear(),
        Relation::HasVulnerability => masked.has_vulnerability.clear(),
        Relation::HasCwe => masked.has_cwe.clear(),
    }
    masked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Dot,
    Json,
}

impl GraphFormat {
    pub fn parse(s: &str) -> Result<GraphFormat, GraphError> {
        match s.to_ascii_uppercase().as_str() {
            "DOT" => Ok(GraphFormat::Dot),
            "JSON" => Ok(GraphFormat::Json),
            other => Err(GraphError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    sbom_id: String,
    label_kind: String,
    leakage_policy: LeakagePolicy,
    nodes: NodesJson,
    edges: EdgesJson,
    features: FeaturesJson,
    labels: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct NodesJson {
    component: Vec<String>,
    cve: Vec<String>,
    cwe: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct EdgesJson {
    #[serde(rename = "DEPENDS_ON")]
    depends_on: Vec<(usize, usize)>,
    #[serde(rename = "HAS_VULNERABILITY")]
    has_vulnerability: Vec<(usize, usize)>,
    #[serde(rename = "HAS_CWE")]
    has_cwe: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct FeaturesJson {
    component: Vec<Vec<f64>>,
    cve: Vec<Vec<f64>>,
    cwe: Vec<Vec<f64>>,
}

/// Byte-deterministic export. DOT prefixes node ids with `comp:`/`cve:`/
/// `cwe:`; JSON uses the stable key names of [`GraphJson`].
pub fn export_graph(graph: &EvidenceGraph, format: GraphFormat) -> Result<Vec<u8>, GraphError> {
    match format {
        GraphFormat::Json => {
            let json = GraphJson {
                sbom_id: graph.sbom_id.clone(),
                label_kind: graph.label_kind.clone(),
                leakage_policy: graph.leakage_policy,
                nodes: NodesJson {
                    component: graph.component_ids.clone(),
                    cve: graph.cve_ids.clone(),
                    cwe: graph.cwe_ids.clone(),
                },
                edges: EdgesJson {
                    depends_on: graph.depends_on.clone(),
                    has_vulnerability: graph.has_vulnerability.clone(),
                    has_cwe: graph.has_cwe.clone(),
                },
                features: FeaturesJson {
                    component: graph.component_features.clone(),
                    cve: graph.cve_features.clone(),
                    cwe: graph.cwe_features.clone(),
                },
                labels: graph.labels.clone(),
            };
            let mut body = serde_json::to_string_pretty(&json)
                .map_err(|e| GraphError::MalformedGraph(e.to_string()))?;
            body.push('\n');
            Ok(body.into_bytes())
        }
        GraphFormat::Dot => {
            let mut out = String::new();
            out.push_str("digraph evidence {\n");
            for (i, id) in graph.component_ids.iter().enumerate() {
                out.push_str(&format!(
                    "  \"comp:{id}\" [type=\"component\" label=\"{id}\" class=\"{}\"];\n",
                    graph.labels[i]
                ));
            }
            for id in &graph.cve_ids {
                out.push_str(&format!("  \"cve:{id}\" [type=\"cve\" label=\"{id}\"];\n"));
            }
            for id in &graph.cwe_ids {
                out.push_str(&format!("  \"cwe:{id}\" [type=\"cwe\" label=\"{id}\"];\n"));
            }
            for &(from, to) in &graph.depends_on {
                out.push_str(&format!(
                    "  \"comp:{}\" -> \"comp:{}\" [label=\"DEPENDS_ON\"];\n",
                    graph.component_ids[from], graph.component_ids[to]
                ));
            }
            for &(comp, cve) in &graph.has_vulnerability {
                out.push_str(&format!(
                    "  \"comp:{}\" -> \"cve:{}\" [label=\"HAS_VULNERABILITY\"];\n",
                    graph.component_ids[comp], graph.cve_ids[cve]
                ));
            }
            for &(cve, cwe) in &graph.has_cwe {
                out.push_str(&format!(
                    "  \"cve:{}\" -> \"cwe:{}\" [label=\"HAS_CWE\"];\n",
                    graph.cve_ids[cve], graph.cwe_ids[cwe]
                ));
            }
            out.push_str("}\n");
            Ok(out.into_bytes())
        }
    }
}

/// Parses a JSON export back into a graph, validating index ranges and
/// matrix dimensions.
pub fn import_graph(bytes: &[u8]) -> Result<EvidenceGraph, GraphError> {
    let json: GraphJson =
        serde_json::from_slice(bytes).map_err(|e| GraphError::MalformedGraph(e.to_string()))?;
    let graph = EvidenceGraph {
        sbom_id: json.sbom_id,
        label_kind: json.label_kind,
        leakage_policy: json.leakage_policy,
        component_ids: json.nodes.component,
        cve_ids: json.nodes.cve,
        cwe_ids: json.nodes.cwe,
        depends_on: json.edges.depends_on,
        has_vulnerability: json.edges.has_vulnerability,
        has_cwe: json.edges.has_cwe,
        component_features: json.features.component,
        cve_features: json.features.cve,
        cwe_features: json.features.cwe,
        labels: json.labels,
    };
    validate_graph(&graph)?;
    Ok(graph)
}

fn validate_graph(graph: &EvidenceGraph) -> Result<(), GraphError> {
    let (nc, nv, nw) = (
        graph.component_ids.len(),
        graph.cve_ids.len(),
        graph.cwe_ids.len(),
    );
    let check = |edges: &[(usize, usize)], src: usize, dst: usize, name: &str| {
        for &(a, b) in edges {
            if a >= src || b >= dst {
                return Err(GraphError::MalformedGraph(format!(
                    "{name} edge ({a}, {b}) out of range for {src}x{dst} nodes"
                )));
            }
        }
        Ok(())
    };
    check(&graph.depends_on, nc, nc, "DEPENDS_ON")?;
    check(&graph.has_vulnerability, nc, nv, "HAS_VULNERABILITY")?;
    check(&graph.has_cwe, nv, nw, "HAS_CWE")?;
    if graph.labels.len() != nc {
        return Err(GraphError::MalformedGraph(format!(
            "{} labels for {nc} components",
            graph.labels.len()
        )));
    }
    let check_rows = |rows: &[Vec<f64>], n: usize, width: usize, name: &str| {
        if rows.len() != n {
            return Err(GraphError::MalformedGraph(format!(
                "{name} features: {} rows for {n} nodes",
                rows.len()
            )));
        }
        for row in rows {
            if row.len() != width {
                return Err(GraphError::MalformedGraph(format!(
                    "{name} feature row has {} columns, expected {width}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(GraphError::MalformedGraph(format!(
                    "{name} features contain a non-finite value"
                )));
            }
        }
        Ok(())
    };
    check_rows(&graph.component_features, nc, COMPONENT_COLUMNS.len(), "component")?;
    check_rows(&graph.cve_features, nv, CVE_COLUMNS.len(), "cve")?;
    check_rows(&graph.cwe_features, nw, CWE_COLUMNS.len(), "cwe")?;
    Ok(())
}
