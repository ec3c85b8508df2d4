//! Chain composition over ranked CVE pairs and projection of chains onto
//! SBOM dependency subgraphs.
//!
//! Pair scores are order-free, so the link graph is undirected and every
//! simple path is emitted once, smaller endpoint first. A chain's score is
//! the geometric mean of its link scores — length-normalized so two-step
//! chains don't win purely by having fewer factors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::EvidenceGraph;
use crate::predictor::RankedPair;

pub const DEFAULT_MAX_CHAIN_LEN: usize = 4;
pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("threshold must be in (0,1), got {0}")]
    InvalidThreshold(f64),
    #[error("max chain length must be at least 2, got {0}")]
    InvalidLength(usize),
    #[error("unknown report format `{0}` (expected JSON, DOT or TEXT)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateChain {
    pub cve_ids: Vec<String>,
    pub link_scores: Vec<f64>,
    pub chain_score: f64,
}

/// Composes every simple path of 2..=`max_len` nodes in the undirected link
/// graph whose edges are the pairs scoring at least `tau`. Paths are emitted
/// once (lexicographically smaller endpoint first) and sorted by descending
/// chain score, then by id sequence.
pub fn compose_chains(
    ranked: &[RankedPair],
    tau: f64,
    max_len: usize,
) -> Result<Vec<CandidateChain>, CascadeError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(CascadeError::InvalidThreshold(tau));
    }
    if max_len < 2 {
        return Err(CascadeError::InvalidLength(max_len));
    }
    let mut scores: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut adjacency: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for pair in ranked {
        if pair.probability < tau || pair.cve_a == pair.cve_b {
            continue;
        }
        let (a, b) = if pair.cve_a <= pair.cve_b {
            (pair.cve_a.clone(), pair.cve_b.clone())
        } else {
            (pair.cve_b.clone(), pair.cve_a.clone())
        };
        scores.entry((a.clone(), b.clone())).or_insert(pair.probability);
        adjacency.entry(a.clone()).or_default().insert(b.clone());
        adjacency.entry(b).or_default().insert(a);
    }

    let mut chains = Vec::new();
    let starts: Vec<String> = adjacency.keys().cloned().collect();
    for start in &starts {
        let mut path = vec![start.clone()];
        let mut visited = BTreeSet::from([start.clone()]);
        extend_path(&adjacency, &scores, max_len, &mut path, &mut visited, &mut chains);
    }
    chains.sort_by(|x, y| {
        y.chain_score
            .total_cmp(&x.chain_score)
            .then_with(|| x.cve_ids.cmp(&y.cve_ids))
    });
    Ok(chains)
}

fn extend_path(
    adjacency: &BTreeMap<String, BTreeSet<String>>,
    scores: &BTreeMap<(String, String), f64>,
    max_len: usize,
    path: &mut Vec<String>,
    visited: &mut BTreeSet<String>,
    out: &mut Vec<CandidateChain>,
) {
    let last = path.last().expect("non-empty path").clone();
    for next in &adjacency[&last] {
        if visited.contains(next) {
            continue;
        }
        path.push(next.clone());
        visited.insert(next.clone());
        if path[0] < *next {
            out.push(score_chain(path, scores));
        }
        if path.len() < max_len {
            extend_path(adjacency, scores, max_len, path, visited, out);
        }
        visited.remove(next);
        path.pop();
    }
}

fn score_chain(path: &[String], scores: &BTreeMap<(String, String), f64>) -> CandidateChain {
    let link_scores: Vec<f64> = path
        .windows(2)
        .map(|w| {
            let key = if w[0] <= w[1] {
                (w[0].clone(), w[1].clone())
            } else {
                (w[1].clone(), w[0].clone())
            };
            scores[&key]
        })
        .collect();
    let chain_score = geometric_mean(&link_scores);
    CandidateChain {
        cve_ids: path.to_vec(),
        link_scores,
        chain_score,
    }
}

fn geometric_mean(values: &[f64]) -> f64 {
    let log_sum: f64 = values.iter().map(|v| v.ln()).sum();
    (log_sum / values.len() as f64).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub chain_id: String,
    /// CVE id → component ids carrying it (document order).
    pub mapped: BTreeMap<String, Vec<String>>,
    pub unmapped_cves: Vec<String>,
    pub induced_nodes: Vec<String>,
    pub induced_edges: Vec<(String, String)>,
    /// Weakly connected components of the induced subgraph.
    pub connectivity: usize,
    pub fully_mapped: bool,
}

/// Projects a chain onto one evidence graph: which components carry each
/// CVE, the DEPENDS_ON subgraph induced by those components, and how
/// connected that subgraph is.
pub fn project_chain(chain: &[String], graph: &EvidenceGraph) -> ProjectionResult {
    let chain_id = chain.join("->");
    let cve_index: BTreeMap<&str, usize> = graph
        .cve_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut mapped: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut unmapped = Vec::new();
    let mut node_indices = BTreeSet::new();
    for cve in chain {
        let mut carriers = Vec::new();
        if let Some(&v) = cve_index.get(cve.as_str()) {
            for &(comp, cve_idx) in &graph.has_vulnerability {
                if cve_idx == v {
                    carriers.push(graph.component_ids[comp].clone());
                    node_indices.insert(comp);
                }
            }
        }
        if carriers.is_empty() {
            unmapped.push(cve.clone());
        } else {
            mapped.insert(cve.clone(), carriers);
        }
    }

    let induced_nodes: Vec<String> = node_indices
        .iter()
        .map(|&i| graph.component_ids[i].clone())
        .collect();
    let mut parent: BTreeMap<usize, usize> = node_indices.iter().map(|&i| (i, i)).collect();
    let mut induced_edges = Vec::new();
    for &(from, to) in &graph.depends_on {
        if node_indices.contains(&from) && node_indices.contains(&to) {
            induced_edges.push((
                graph.component_ids[from].clone(),
                graph.component_ids[to].clone(),
            ));
            union(&mut parent, from, to);
        }
    }
    let connectivity = node_indices
        .iter()
        .filter(|&&i| find(&mut parent, i) == i)
        .count();

    let fully_mapped = unmapped.is_empty() && !chain.is_empty();
    ProjectionResult {
        chain_id,
        mapped,
        unmapped_cves: unmapped,
        induced_nodes,
        induced_edges,
        connectivity,
        fully_mapped,
    }
}

fn find(parent: &mut BTreeMap<usize, usize>, mut x: usize) -> usize {
    while parent[&x] != x {
        let up = parent[&parent[&x]];
        parent.insert(x, up);
        x = up;
    }
    x
}

fn union(parent: &mut BTreeMap<usize, usize>, a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent.insert(ra.max(rb), ra.min(rb));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Dot,
    Text,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<ReportFormat, CascadeError> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "dot" => Ok(ReportFormat::Dot),
            "text" | "txt" => Ok(ReportFormat::Text),
            other => Err(CascadeError::UnknownFormat(other.to_string())),
        }
    }
}

/// Verdict shown per projection: CONNECTED needs a fully mapped chain whose
/// carriers form one weakly connected dependency subgraph.
fn verdict(p: &ProjectionResult) -> &'static str {
    if p.induced_nodes.is_empty() {
        "UNMAPPED"
    } else if p.connectivity > 1 {
        "DISCONNECTED"
    } else if p.fully_mapped {
        "CONNECTED"
    } else {
        "PARTIALLY_MAPPED"
    }
}

#[derive(Serialize)]
struct ReportJson<'a> {
    top_chains: &'a [CandidateChain],
    verdicts: Vec<&'static str>,
    projections: &'a [ProjectionResult],
}

/// Renders the triage report. `top_k` caps how many candidate chains are
/// listed (projections are always rendered in full).
pub fn triage_report(
    projections: &[ProjectionResult],
    chains: &[CandidateChain],
    format: ReportFormat,
    top_k: usize,
) -> Result<Vec<u8>, CascadeError> {
    let shown = &chains[..top_k.min(chains.len())];
    let bytes = match format {
        ReportFormat::Json => {
            let report = ReportJson {
                top_chains: shown,
                verdicts: projections.iter().map(verdict).collect(),
                projections,
            };
            let mut text =
                serde_json::to_string_pretty(&report).expect("report serializes");
            text.push('\n');
            text.into_bytes()
        }
        ReportFormat::Text => render_text(projections, shown, chains.len()).into_bytes(),
        ReportFormat::Dot => render_dot(projections).into_bytes(),
    };
    Ok(bytes)
}

fn render_text(
    projections: &[ProjectionResult],
    shown: &[CandidateChain],
    total_chains: usize,
) -> String {
    let mut out = String::new();
    out.push_str("Cascade triage report\n");
    out.push_str("=====================\n\n");
    out.push_str(&format!(
        "Top candidate chains ({} of {} shown)\n",
        shown.len(),
        total_chains
    ));
    for (i, chain) in shown.iter().enumerate() {
        let links = chain
            .link_scores
            .iter()
            .map(|s| format!("{s:.4}"))
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str(&format!(
            "  {}. {}  score {:.4}  links [{}]\n",
            i + 1,
            chain.cve_ids.join(" -> "),
            chain.chain_score,
            links
        ));
    }
    if shown.is_empty() {
        out.push_str("  (none)\n");
    }
    for p in projections {
        out.push_str(&format!("\nProjection: {}\n", p.chain_id));
        out.push_str(&format!(
            "  verdict: {} ({} weakly connected component{})\n",
            verdict(p),
            p.connectivity,
            if p.connectivity == 1 { "" } else { "s" }
        ));
        out.push_str("  mapped:\n");
        for (cve, comps) in &p.mapped {
            out.push_str(&format!("    {}: {}\n", cve, comps.join(", ")));
        }
        if p.mapped.is_empty() {
            out.push_str("    (none)\n");
        }
        if p.unmapped_cves.is_empty() {
            out.push_str("  unmapped: none\n");
        } else {
            out.push_str(&format!("  unmapped: {}\n", p.unmapped_cves.join(", ")));
        }
        out.push_str(&format!(
            "  induced subgraph: {} node{}, {} edge{}\n",
            p.induced_nodes.len(),
            if p.induced_nodes.len() == 1 { "" } else { "s" },
            p.induced_edges.len(),
            if p.induced_edges.len() == 1 { "" } else { "s" }
        ));
        for (from, to) in &p.induced_edges {
            out.push_str(&format!("    {from} -> {to}\n"));
        }
    }
    out
}

fn render_dot(projections: &[ProjectionResult]) -> String {
    let mut out = String::new();
    out.push_str("digraph triage {\n");
    for (i, p) in projections.iter().enumerate() {
        // Chain CVEs carried by each component, for node and edge labels.
        let mut carried: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (cve, comps) in &p.mapped {
            for comp in comps {
                carried.entry(comp.as_str()).or_default().insert(cve.as_str());
            }
        }
        let cves_of = |comp: &str| -> String {
            carried
                .get(comp)
                .map(|s| s.iter().copied().collect::<Vec<_>>().join(","))
                .unwrap_or_default()
        };
        out.push_str(&format!("  subgraph cluster_{i} {{\n"));
        out.push_str(&format!(
            "    label=\"{} [{}]\";\n",
            escape_dot(&p.chain_id),
            verdict(p)
        ));
        for node in &p.induced_nodes {
            out.push_str(&format!(
                "    \"{i}:{}\" [label=\"{}\\n{}\"];\n",
                escape_dot(node),
                escape_dot(node),
                escape_dot(&cves_of(node))
            ));
        }
        for (from, to) in &p.induced_edges {
            let mut annot: BTreeSet<&str> = BTreeSet::new();
            if let Some(s) = carried.get(from.as_str()) {
                annot.extend(s);
            }
            if let Some(s) = carried.get(to.as_str()) {
                annot.extend(s);
            }
            out.push_str(&format!(
                "    \"{i}:{}\" -> \"{i}:{}\" [label=\"{}\"];\n",
                escape_dot(from),
                escape_dot(to),
                escape_dot(&annot.into_iter().collect::<Vec<_>>().join(","))
            ));
        }
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
