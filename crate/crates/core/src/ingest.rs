//! Parsing of vulnerability-enriched CycloneDX SBOM documents.
//!
//! Accepts CycloneDX JSON (spec versions 1.4 through 1.6) with scanner
//! findings embedded in the standard `vulnerabilities` array. The parser is
//! forgiving about data problems that scanners produce in practice — dangling
//! dependency references, non-CVE advisory ids, duplicated entries — dropping
//! them deterministically and counting every drop for the parse report.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed CycloneDX document: {0}")]
    MalformedDocument(String),
    #[error("unsupported CycloneDX spec version {0:?} (supported: 1.4, 1.5, 1.6)")]
    UnsupportedSpecVersion(String),
    #[error("invalid sbom: {0}")]
    InvalidSbom(String),
}

/// One software component declared by the SBOM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentRecord {
    /// CycloneDX `bom-ref`, or a synthesized `name@version#index` key.
    pub component_id: String,
    pub name: String,
    pub version: String,
    pub purl: Option<String>,
    pub licenses: Vec<String>,
}

/// Directed dependency: `from_id` depends on `to_id`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DependencyRelation {
    pub from_id: String,
    pub to_id: String,
}

/// One scanner finding: a CVE affecting a component.
#[derive(Debug, Clone, PartialEq)]
pub struct VulnFinding {
    pub component_id: String,
    pub cve_id: String,
    pub severity_hint: Option<String>,
    pub cvss_hint: Option<f64>,
    pub cwe_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct IngestStats {
    dangling_dropped: usize,
    non_cve_dropped: usize,
    missing_version: usize,
}

/// Parsed and validated SBOM with enrichment findings.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedSbom {
    pub sbom_id: String,
    pub components: Vec<ComponentRecord>,
    pub dependencies: Vec<DependencyRelation>,
    pub findings: Vec<VulnFinding>,
    /// Components that never appear as a dependency target, recomputed from
    /// `dependencies`.
    pub root_ids: Vec<String>,
    stats: IngestStats,
}

/// Structured counts for the `ingest` report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub components: usize,
    pub dependency_edges: usize,
    pub findings: usize,
    pub dangling_dropped: usize,
    pub non_cve_dropped: usize,
    pub missing_version: usize,
}

/// Whether a component is required directly by a root or only transitively.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DependencyKind {
    Direct,
    Transitive,
}

pub fn is_cve_id(id: &str) -> bool {
    let Some(rest) = id.strip_prefix("CVE-") else {
        return false;
    };
    let Some((year, seq)) = rest.split_once('-') else {
        return false;
    };
    year.len() == 4
        && year.bytes().all(|b| b.is_ascii_digit())
        && seq.len() >= 4
        && seq.bytes().all(|b| b.is_ascii_digit())
}

/// Uppercases CVE identifiers so case variants hit the same record.
pub fn normalize_cve_id(id: &str) -> String {
    id.trim().to_ascii_uppercase()
}

pub fn is_cwe_id(id: &str) -> bool {
    match id.strip_prefix("CWE-") {
        Some(rest) => !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()),
        None => false,
    }
}

#[derive(Deserialize)]
struct RawBom {
    #[serde(rename = "bomFormat")]
    bom_format: Option<String>,
    #[serde(rename = "specVersion")]
    spec_version: Option<String>,
    metadata: Option<RawMetadata>,
    #[serde(default)]
    components: Vec<RawComponent>,
    #[serde(default)]
    dependencies: Vec<RawDependency>,
    #[serde(default)]
    vulnerabilities: Vec<RawVulnerability>,
}

#[derive(Deserialize)]
struct RawMetadata {
    component: Option<RawComponent>,
}

#[derive(Deserialize)]
struct RawComponent {
    #[serde(rename = "bom-ref")]
    bom_ref: Option<String>,
    name: Option<String>,
    version: Option<String>,
    purl: Option<String>,
    #[serde(default)]
    licenses: Vec<RawLicenseChoice>,
    #[serde(default)]
    components: Vec<RawComponent>,
}

#[derive(Deserialize)]
struct RawLicenseChoice {
    license: Option<RawLicense>,
    expression: Option<String>,
}

#[derive(Deserialize)]
struct RawLicense {
    id: Option<String>,
    name: Option<String>,
}

#[derive(Deserialize)]
struct RawDependency {
    #[serde(rename = "ref")]
    dependency_ref: String,
    #[serde(rename = "dependsOn", default)]
    depends_on: Vec<String>,
}

#[derive(Deserialize)]
struct RawVulnerability {
    id: Option<String>,
    #[serde(default)]
    ratings: Vec<RawRating>,
    #[serde(default)]
    cwes: Vec<u64>,
    #[serde(default)]
    affects: Vec<RawAffect>,
}

#[derive(Deserialize)]
struct RawRating {
    score: Option<f64>,
    severity: Option<String>,
}

#[derive(Deserialize)]
struct RawAffect {
    #[serde(rename = "ref")]
    affected_ref: Option<String>,
}

const SUPPORTED_SPEC_VERSIONS: [&str; 3] = ["1.4", "1.5", "1.6"];

/// Parses a CycloneDX JSON document. The `sbom_id` defaults to a digest of
/// the input bytes; callers with a natural name attach it via
/// [`EnrichedSbom::with_sbom_id`].
pub fn parse_cyclonedx(bytes: &[u8]) -> Result<EnrichedSbom, IngestError> {
    let raw: RawBom = serde_json::from_slice(bytes)
        .map_err(|e| IngestError::MalformedDocument(e.to_string()))?;
    if let Some(format) = &raw.bom_format {
        if format != "CycloneDX" {
            return Err(IngestError::MalformedDocument(format!(
                "bomFormat {format:?} is not CycloneDX"
            )));
        }
    }
    let version = raw
        .spec_version
        .as_deref()
        .ok_or_else(|| IngestError::MalformedDocument("missing specVersion".into()))?;
    if !SUPPORTED_SPEC_VERSIONS.contains(&version) {
        return Err(IngestError::UnsupportedSpecVersion(version.to_string()));
    }

    let mut stats = IngestStats::default();

    // Flatten metadata.component plus the component tree in document order.
    let mut flat: Vec<RawComponent> = Vec::new();
    if let Some(meta) = raw.metadata {
        if let Some(root) = meta.component {
            flatten_components(root, &mut flat);
        }
    }
    for component in raw.components {
        flatten_components(component, &mut flat);
    }

    let mut components = Vec::with_capacity(flat.len());
    let mut ids = BTreeSet::new();
    for (index, rc) in flat.into_iter().enumerate() {
        let name = match rc.name.filter(|n| !n.is_empty()) {
            Some(n) => n,
            None => rc
                .bom_ref
                .clone()
                .filter(|r| !r.is_empty())
                .unwrap_or_else(|| format!("component-{index}")),
        };
        let version = rc.version.unwrap_or_default();
        if version.is_empty() {
            stats.missing_version += 1;
        }
        let component_id = match rc.bom_ref.filter(|r| !r.is_empty()) {
            Some(r) => r,
            None => format!("{name}@{version}#{index}"),
        };
        if !ids.insert(component_id.clone()) {
            // Same id declared twice (commonly metadata.component repeated in
            // the component list); first declaration wins.
            continue;
        }
        let licenses = rc
            .licenses
            .into_iter()
            .filter_map(|choice| {
                choice
                    .expression
                    .or_else(|| choice.license.and_then(|l| l.id.or(l.name)))
            })
            .filter(|l| !l.is_empty())
            .collect();
        components.push(ComponentRecord {
            component_id,
            name,
            version,
            purl: rc.purl,
            licenses,
        });
    }

    let mut dependencies = Vec::new();
    let mut seen_edges = BTreeSet::new();
    for dep in raw.dependencies {
        if !ids.contains(&dep.dependency_ref) {
            stats.dangling_dropped += 1 + dep.depends_on.len();
            continue;
        }
        for target in dep.depends_on {
            if target == dep.dependency_ref || !ids.contains(&target) {
                stats.dangling_dropped += 1;
                continue;
            }
            if seen_edges.insert((dep.dependency_ref.clone(), target.clone())) {
                dependencies.push(DependencyRelation {
                    from_id: dep.dependency_ref.clone(),
                    to_id: target,
                });
            }
        }
    }

    let mut findings = Vec::new();
    let mut seen_findings = BTreeSet::new();
    for vuln in raw.vulnerabilities {
        let id = normalize_cve_id(vuln.id.as_deref().unwrap_or(""));
        if !is_cve_id(&id) {
            stats.non_cve_dropped += 1;
            continue;
        }
        let cvss_hint = vuln
            .ratings
            .iter()
            .filter_map(|r| r.score)
            .find(|s| (0.0..=10.0).contains(s));
        let severity_hint = vuln
            .ratings
            .iter()
            .filter_map(|r| r.severity.clone())
            .next();
        let cwe_ids: Vec<String> = {
            let mut seen = BTreeSet::new();
            vuln.cwes
                .iter()
                .map(|n| format!("CWE-{n}"))
                .filter(|c| seen.insert(c.clone()))
                .collect()
        };
        for affect in &vuln.affects {
            let Some(target) = affect.affected_ref.as_deref() else {
                stats.dangling_dropped += 1;
                continue;
            };
            if !ids.contains(target) {
                stats.dangling_dropped += 1;
                continue;
            }
            if seen_findings.insert((target.to_string(), id.clone())) {
                findings.push(VulnFinding {
                    component_id: target.to_string(),
                    cve_id: id.clone(),
                    severity_hint: severity_hint.clone(),
                    cvss_hint,
                    cwe_ids: cwe_ids.clone(),
                });
            }
        }
    }

    let sbom_id = digest_id(bytes);
    let root_ids = compute_roots(&components, &dependencies);
    Ok(EnrichedSbom {
        sbom_id,
        components,
        dependencies,
        findings,
        root_ids,
        stats,
    })
}

fn flatten_components(component: RawComponent, out: &mut Vec<RawComponent>) {
    let RawComponent {
        bom_ref,
        name,
        version,
        purl,
        licenses,
        components,
    } = component;
    out.push(RawComponent {
        bom_ref,
        name,
        version,
        purl,
        licenses,
        components: Vec::new(),
    });
    for child in components {
        flatten_components(child, out);
    }
}

fn digest_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut id = String::with_capacity(16);
    for b in &digest[..8] {
        id.push_str(&format!("{b:02x}"));
    }
    id
}

fn compute_roots(
    components: &[ComponentRecord],
    dependencies: &[DependencyRelation],
) -> Vec<String> {
    let targets: BTreeSet<&str> = dependencies.iter().map(|d| d.to_id.as_str()).collect();
    components
        .iter()
        .filter(|c| !targets.contains(c.component_id.as_str()))
        .map(|c| c.component_id.clone())
        .collect()
}

impl EnrichedSbom {
    pub fn with_sbom_id(mut self, sbom_id: &str) -> Self {
        self.sbom_id = sbom_id.to_string();
        self
    }

    /// Builds an SBOM directly from parts, validating the invariants the
    /// parser guarantees. Used by generators and tests.
    pub fn assemble(
        sbom_id: &str,
        components: Vec<ComponentRecord>,
        dependencies: Vec<DependencyRelation>,
        findings: Vec<VulnFinding>,
    ) -> Result<EnrichedSbom, IngestError> {
        let mut ids = BTreeSet::new();
        for c in &components {
            if c.name.is_empty() {
                return Err(IngestError::InvalidSbom(format!(
                    "component {:?} has an empty name",
                    c.component_id
                )));
            }
            if !ids.insert(c.component_id.as_str()) {
                return Err(IngestError::InvalidSbom(format!(
                    "duplicate component id {:?}",
                    c.component_id
                )));
            }
        }
        let mut seen_edges = BTreeSet::new();
        for d in &dependencies {
            if d.from_id == d.to_id {
                return Err(IngestError::InvalidSbom(format!(
                    "self-loop on {:?}",
                    d.from_id
                )));
            }
            if !ids.contains(d.from_id.as_str()) || !ids.contains(d.to_id.as_str()) {
                return Err(IngestError::InvalidSbom(format!(
                    "dependency {:?} -> {:?} references an undeclared component",
                    d.from_id, d.to_id
                )));
            }
            if !seen_edges.insert((d.from_id.as_str(), d.to_id.as_str())) {
                return Err(IngestError::InvalidSbom(format!(
                    "duplicate dependency {:?} -> {:?}",
                    d.from_id, d.to_id
                )));
            }
        }
        let mut seen_findings = BTreeSet::new();
        for f in &findings {
            if !ids.contains(f.component_id.as_str()) {
                return Err(IngestError::InvalidSbom(format!(
                    "finding on undeclared component {:?}",
                    f.component_id
                )));
            }
            if !is_cve_id(&f.cve_id) {
                return Err(IngestError::InvalidSbom(format!(
                    "finding id {:?} is not a CVE id",
                    f.cve_id
                )));
            }
            if !seen_findings.insert((f.component_id.as_str(), f.cve_id.as_str())) {
                return Err(IngestError::InvalidSbom(format!(
                    "duplicate finding ({:?}, {:?})",
                    f.component_id, f.cve_id
                )));
            }
        }
        let root_ids = compute_roots(&components, &dependencies);
        Ok(EnrichedSbom {
            sbom_id: sbom_id.to_string(),
            components,
            dependencies,
            findings,
            root_ids,
            stats: IngestStats::default(),
        })
    }
}

/// Deterministic counts describing one parsed SBOM.
pub fn parse_report(sbom: &EnrichedSbom) -> IngestReport {
    IngestReport {
        components: sbom.components.len(),
        dependency_edges: sbom.dependencies.len(),
        findings: sbom.findings.len(),
        dangling_dropped: sbom.stats.dangling_dropped,
        non_cve_dropped: sbom.stats.non_cve_dropped,
        missing_version: sbom.stats.missing_version,
    }
}

/// Classifies every component as a direct or transitive dependency: roots
/// and dependency targets of roots are direct, everything else transitive.
pub fn direct_dependency_set(sbom: &EnrichedSbom) -> BTreeMap<String, DependencyKind> {
    let roots: BTreeSet<&str> = sbom.root_ids.iter().map(String::as_str).collect();
    let mut kinds: BTreeMap<String, DependencyKind> = sbom
        .components
        .iter()
        .map(|c| {
            let kind = if roots.contains(c.component_id.as_str()) {
                DependencyKind::Direct
            } else {
                DependencyKind::Transitive
            };
            (c.component_id.clone(), kind)
        })
        .collect();
    for dep in &sbom.dependencies {
        if roots.contains(dep.from_id.as_str()) {
            kinds.insert(dep.to_id.clone(), DependencyKind::Direct);
        }
    }
    kinds
}
