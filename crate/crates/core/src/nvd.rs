//! NVD-style CVE metadata: snapshot loading, known-exploited lists, and an
//! optional live fetch client.
//!
//! Two snapshot formats are accepted and may be mixed freely: real NVD API
//! 2.0 response JSON, and a simplified flat format all pipelines read and
//! write (a JSON array of objects with keys `cve_id`, `cvss_base`,
//! `severity`, `published_year`, `exploited`, `reference_count`, `cwe_ids`).
//! Everything runs from local files; [`fetch_live`] exists only to produce
//! snapshots on machines with network access.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{is_cwe_id, normalize_cve_id};

#[derive(Debug, Error)]
pub enum NvdError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed snapshot {path}: {detail}")]
    MalformedSnapshot { path: String, detail: String },
    #[error("malformed exploited list {path}: {detail}")]
    MalformedList { path: String, detail: String },
    #[error("network error after {attempts} attempts: {detail}")]
    NetworkError { attempts: u32, detail: String },
    #[error("rate limited by endpoint (retry-after: {retry_after:?})")]
    RateLimited { retry_after: Option<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    Unknown,
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    /// Four bins LOW..CRITICAL; UNKNOWN encodes as all zeros.
    pub fn one_hot(self) -> [f64; 4] {
        match self {
            Severity::Unknown => [0.0, 0.0, 0.0, 0.0],
            Severity::Low => [1.0, 0.0, 0.0, 0.0],
            Severity::Medium => [0.0, 1.0, 0.0, 0.0],
            Severity::High => [0.0, 0.0, 1.0, 0.0],
            Severity::Critical => [0.0, 0.0, 0.0, 1.0],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Unknown => "UNKNOWN",
            Severity::Low => "LOW",
            Severity::Medium => "MEDIUM",
            Severity::High => "HIGH",
            Severity::Critical => "CRITICAL",
        }
    }

    pub fn parse(s: &str) -> Severity {
        match s.to_ascii_uppercase().as_str() {
            "LOW" => Severity::Low,
            "MEDIUM" => Severity::Medium,
            "HIGH" => Severity::High,
            "CRITICAL" => Severity::Critical,
            _ => Severity::Unknown,
        }
    }

    /// CVSS v2 has no severity string; NVD's published score bands.
    fn from_v2_score(score: f64) -> Severity {
        if score >= 7.0 {
            Severity::High
        } else if score >= 4.0 {
            Severity::Medium
        } else {
            Severity::Low
        }
    }
}

/// Per-CVE metadata record. `cwe_ids` is stored deduplicated, so
/// [`CveMeta::cwe_count`] is always consistent with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CveMeta {
    pub cve_id: String,
    pub cvss_base: f64,
    pub severity: Severity,
    pub published_year: i64,
    pub exploited: bool,
    pub reference_count: usize,
    pub cwe_ids: Vec<String>,
}

impl CveMeta {
    pub fn cwe_count(&self) -> usize {
        self.cwe_ids.len()
    }

    /// The all-defaults record used when a CVE has no snapshot entry.
    pub fn absent(cve_id: &str) -> CveMeta {
        CveMeta {
            cve_id: normalize_cve_id(cve_id),
            cvss_base: 0.0,
            severity: Severity::Unknown,
            published_year: 0,
            exploited: false,
            reference_count: 0,
            cwe_ids: Vec::new(),
        }
    }
}

/// Immutable-after-load index of CVE metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetaStore {
    index: BTreeMap<String, CveMeta>,
    snapshot_digest: String,
    overrides: usize,
}

/// Result of applying an exploited list to a store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploitedCoverage {
    pub listed: usize,
    pub matched: usize,
    pub missing: Vec<String>,
}

impl MetaStore {
    pub fn empty() -> MetaStore {
        MetaStore {
            snapshot_digest: hex_digest(&Sha256::digest(b"")),
            ..MetaStore::default()
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn lookup(&self, cve_id: &str) -> Option<&CveMeta> {
        self.index.get(&normalize_cve_id(cve_id))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn records(&self) -> impl Iterator<Item = &CveMeta> {
        self.index.values()
    }

    pub fn snapshot_digest(&self) -> &str {
        &self.snapshot_digest
    }

    /// Count of records replaced by a later duplicate during load.
    pub fn override_count(&self) -> usize {
        self.overrides
    }

    pub fn insert(&mut self, mut meta: CveMeta) {
        meta.cve_id = normalize_cve_id(&meta.cve_id);
        meta.cwe_ids = dedup_preserving(meta.cwe_ids);
        if self
            .index
            .insert(meta.cve_id.clone(), meta)
            .is_some()
        {
            self.overrides += 1;
        }
    }

    /// Marks listed ids exploited; ids missing from the store are reported.
    pub fn apply_exploited(&mut self, ids: &BTreeSet<String>) -> ExploitedCoverage {
        let mut matched = 0;
        let mut missing = Vec::new();
        for id in ids {
            let id = normalize_cve_id(id);
            match self.index.get_mut(&id) {
                Some(meta) => {
                    meta.exploited = true;
                    matched += 1;
                }
                None => missing.push(id),
            }
        }
        ExploitedCoverage {
            listed: ids.len(),
            matched,
            missing,
        }
    }
}

fn dedup_preserving(ids: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    ids.into_iter().filter(|id| seen.insert(id.clone())).collect()
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

// --- NVD API 2.0 response shape (the fields this toolkit reads) ---

#[derive(Deserialize)]
struct NvdResponse {
    #[serde(default)]
    vulnerabilities: Vec<NvdItem>,
    #[serde(rename = "totalResults")]
    total_results: Option<usize>,
    #[serde(rename = "startIndex")]
    start_index: Option<usize>,
}

#[derive(Deserialize)]
struct NvdItem {
    cve: NvdCve,
}

#[derive(Deserialize)]
struct NvdCve {
    id: String,
    published: Option<String>,
    #[serde(default)]
    references: Vec<serde_json::Value>,
    #[serde(default)]
    weaknesses: Vec<NvdWeakness>,
    #[serde(default)]
    metrics: NvdMetrics,
}

#[derive(Deserialize)]
struct NvdWeakness {
    #[serde(default)]
    description: Vec<NvdWeaknessDescription>,
}

#[derive(Deserialize)]
struct NvdWeaknessDescription {
    value: String,
}

#[derive(Deserialize, Default)]
struct NvdMetrics {
    #[serde(rename = "cvssMetricV31", default)]
    v31: Vec<NvdCvssMetric>,
    #[serde(rename = "cvssMetricV30", default)]
    v30: Vec<NvdCvssMetric>,
    #[serde(rename = "cvssMetricV2", default)]
    v2: Vec<NvdCvssMetric>,
}

#[derive(Deserialize)]
struct NvdCvssMetric {
    #[serde(rename = "cvssData")]
    cvss_data: NvdCvssData,
}

#[derive(Deserialize)]
struct NvdCvssData {
    #[serde(rename = "baseScore")]
    base_score: Option<f64>,
    #[serde(rename = "baseSeverity")]
    base_severity: Option<String>,
}

fn meta_from_nvd_item(item: &NvdItem) -> CveMeta {
    let cve = &item.cve;
    let published_year = cve
        .published
        .as_deref()
        .and_then(|p| p.get(..4))
        .and_then(|y| y.parse::<i64>().ok())
        .unwrap_or(0);
    let mut cwe_ids = Vec::new();
    for weakness in &cve.weaknesses {
        for desc in &weakness.description {
            if is_cwe_id(&desc.value) {
                cwe_ids.push(desc.value.clone());
            }
        }
    }
    let (cvss_base, severity) = cvss_from_metrics(&cve.metrics);
    CveMeta {
        cve_id: normalize_cve_id(&cve.id),
        cvss_base,
        severity,
        published_year,
        exploited: false,
        reference_count: cve.references.len(),
        cwe_ids: dedup_preserving(cwe_ids),
    }
}

fn cvss_from_metrics(metrics: &NvdMetrics) -> (f64, Severity) {
    for metric in metrics.v31.iter().chain(metrics.v30.iter()) {
        if let Some(score) = metric.cvss_data.base_score {
            let severity = metric
                .cvss_data
                .base_severity
                .as_deref()
                .map(Severity::parse)
                .unwrap_or(Severity::Unknown);
            return (score.clamp(0.0, 10.0), severity);
        }
    }
    for metric in &metrics.v2 {
        if let Some(score) = metric.cvss_data.base_score {
            let score = score.clamp(0.0, 10.0);
            return (score, Severity::from_v2_score(score));
        }
    }
    (0.0, Severity::Unknown)
}

// --- simplified snapshot format ---

#[derive(Serialize, Deserialize)]
struct SimplifiedRecord {
    cve_id: String,
    cvss_base: f64,
    severity: Severity,
    published_year: i64,
    exploited: bool,
    reference_count: usize,
    cwe_ids: Vec<String>,
}

impl From<SimplifiedRecord> for CveMeta {
    fn from(r: SimplifiedRecord) -> CveMeta {
        CveMeta {
            cve_id: r.cve_id,
            cvss_base: r.cvss_base,
            severity: r.severity,
            published_year: r.published_year,
            exploited: r.exploited,
            reference_count: r.reference_count,
            cwe_ids: r.cwe_ids,
        }
    }
}

impl From<&CveMeta> for SimplifiedRecord {
    fn from(m: &CveMeta) -> SimplifiedRecord {
        SimplifiedRecord {
            cve_id: m.cve_id.clone(),
            cvss_base: m.cvss_base,
            severity: m.severity,
            published_year: m.published_year,
            exploited: m.exploited,
            reference_count: m.reference_count,
            cwe_ids: m.cwe_ids.clone(),
        }
    }
}

/// Loads one or more snapshot files. Later files (and later records within a
/// file) override earlier ones; the digest covers all file bytes in order.
pub fn load_snapshot<P: AsRef<Path>>(paths: &[P]) -> Result<MetaStore, NvdError> {
    let mut store = MetaStore::default();
    let mut hasher = Sha256::new();
    for path in paths {
        let path = path.as_ref();
        let display = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|source| NvdError::Io {
            path: display.clone(),
            source,
        })?;
        hasher.update(&bytes);
        for meta in parse_snapshot_bytes(&bytes, &display)? {
            store.insert(meta);
        }
    }
    store.snapshot_digest = hex_digest(&hasher.finalize());
    Ok(store)
}

fn parse_snapshot_bytes(bytes: &[u8], path: &str) -> Result<Vec<CveMeta>, NvdError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| NvdError::MalformedSnapshot {
            path: path.to_string(),
            detail: e.to_string(),
        })?;
    match &value {
        serde_json::Value::Array(_) => {
            let records: Vec<SimplifiedRecord> =
                serde_json::from_value(value).map_err(|e| NvdError::MalformedSnapshot {
                    path: path.to_string(),
                    detail: format!("simplified format: {e}"),
                })?;
            Ok(records.into_iter().map(CveMeta::from).collect())
        }
        serde_json::Value::Object(map) if map.contains_key("vulnerabilities") => {
            let response: NvdResponse =
                serde_json::from_value(value).map_err(|e| NvdError::MalformedSnapshot {
                    path: path.to_string(),
                    detail: format!("NVD API format: {e}"),
                })?;
            Ok(response
                .vulnerabilities
                .iter()
                .map(meta_from_nvd_item)
                .collect())
        }
        _ => Err(NvdError::MalformedSnapshot {
            path: path.to_string(),
            detail: "expected a JSON array (simplified) or an object with `vulnerabilities`"
                .to_string(),
        }),
    }
}

/// Writes a store's records as a simplified snapshot file (sorted by id).
pub fn write_snapshot(store: &MetaStore, path: &Path) -> Result<(), NvdError> {
    let records: Vec<SimplifiedRecord> = store.records().map(SimplifiedRecord::from).collect();
    let mut body = serde_json::to_string_pretty(&records).expect("snapshot records serialize");
    body.push('\n');
    std::fs::write(path, body).map_err(|source| NvdError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a known-exploited list: KEV-shaped JSON (records with `cveID`), a
/// plain JSON array of id strings, or CSV with a `cveID` column.
pub fn load_exploited_list(path: &Path) -> Result<BTreeSet<String>, NvdError> {
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| NvdError::Io {
        path: display.clone(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') || trimmed.starts_with('[') {
        parse_exploited_json(&bytes, &display)
    } else {
        parse_exploited_csv(&bytes, &display)
    }
}

fn parse_exploited_json(bytes: &[u8], path: &str) -> Result<BTreeSet<String>, NvdError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| NvdError::MalformedList {
            path: path.to_string(),
            detail: e.to_string(),
        })?;
    let records = match &value {
        serde_json::Value::Array(items) => items.as_slice(),
        serde_json::Value::Object(map) => match map.get("vulnerabilities") {
            Some(serde_json::Value::Array(items)) => items.as_slice(),
            _ => {
                return Err(NvdError::MalformedList {
                    path: path.to_string(),
                    detail: "object form requires a `vulnerabilities` array".to_string(),
                })
            }
        },
        _ => {
            return Err(NvdError::MalformedList {
                path: path.to_string(),
                detail: "expected a JSON array or KEV-shaped object".to_string(),
            })
        }
    };
    let mut ids = BTreeSet::new();
    for record in records {
        let id = match record {
            serde_json::Value::String(s) => Some(s.clone()),
            serde_json::Value::Object(map) => map
                .get("cveID")
                .and_then(|v| v.as_str())
                .map(str::to_string),
            _ => None,
        };
        match id {
            Some(id) => {
                ids.insert(normalize_cve_id(&id));
            }
            None => {
                return Err(NvdError::MalformedList {
                    path: path.to_string(),
                    detail: "record without a cveID field".to_string(),
                })
            }
        }
    }
    Ok(ids)
}

fn parse_exploited_csv(bytes: &[u8], path: &str) -> Result<BTreeSet<String>, NvdError> {
    let mut reader = csv::Reader::from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| NvdError::MalformedList {
            path: path.to_string(),
            detail: e.to_string(),
        })?
        .clone();
    let column = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("cveid") || h.eq_ignore_ascii_case("cve_id"))
        .ok_or_else(|| NvdError::MalformedList {
            path: path.to_string(),
            detail: "no cveID column in CSV header".to_string(),
        })?;
    let mut ids = BTreeSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| NvdError::MalformedList {
            path: path.to_string(),
            detail: e.to_string(),
        })?;
        if let Some(id) = row.get(column) {
            if !id.is_empty() {
                ids.insert(normalize_cve_id(id));
            }
        }
    }
    Ok(ids)
}

// --- live fetch client ---

/// Endpoint configuration for [`fetch_live`]. Defaults target the public
/// NVD REST API 2.0 with its keyless rate limits.
#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub base_url: String,
    /// Falls back to the `NVD_API_KEY` environment variable when unset.
    pub api_key: Option<String>,
    /// When true, all ids go in one comma-separated `cveId` parameter.
    pub supports_id_filter: bool,
    pub request_interval_ms: u64,
    pub backoff_base_ms: u64,
    pub max_attempts: u32,
}

impl Default for FetchConfig {
    fn default() -> FetchConfig {
        FetchConfig {
            base_url: "https://services.nvd.nist.gov/rest/json/cves/2.0".to_string(),
            api_key: None,
            supports_id_filter: false,
            request_interval_ms: 6000,
            backoff_base_ms: 2000,
            max_attempts: 3,
        }
    }
}

/// Fetches metadata for the given ids and writes a simplified snapshot to
/// `out_path`. Returns the number of records written.
pub fn fetch_live(
    cve_ids: &[String],
    config: &FetchConfig,
    out_path: &Path,
) -> Result<usize, NvdError> {
    let mut store = MetaStore::default();
    if !cve_ids.is_empty() {
        let api_key = config
            .api_key
            .clone()
            .or_else(|| std::env::var("NVD_API_KEY").ok().filter(|k| !k.is_empty()));
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| NvdError::NetworkError {
                attempts: 0,
                detail: e.to_string(),
            })?;
        let queries: Vec<String> = if config.supports_id_filter {
            vec![cve_ids
                .iter()
                .map(|id| normalize_cve_id(id))
                .collect::<Vec<_>>()
                .join(",")]
        } else {
            cve_ids.iter().map(|id| normalize_cve_id(id)).collect()
        };
        for (i, query) in queries.iter().enumerate() {
            if i > 0 && config.request_interval_ms > 0 {
                std::thread::sleep(Duration::from_millis(config.request_interval_ms));
            }
            fetch_pages(&client, config, api_key.as_deref(), query, &mut store)?;
        }
    }
    store.snapshot_digest = String::new();
    write_snapshot(&store, out_path)?;
    Ok(store.len())
}

fn fetch_pages(
    client: &reqwest::blocking::Client,
    config: &FetchConfig,
    api_key: Option<&str>,
    cve_id_query: &str,
    store: &mut MetaStore,
) -> Result<(), NvdError> {
    let mut start_index = 0usize;
    loop {
        let url = format!(
            "{}?cveId={}&startIndex={}",
            config.base_url, cve_id_query, start_index
        );
        let body = request_with_retry(client, config, api_key, &url)?;
        let response: NvdResponse =
            serde_json::from_str(&body).map_err(|e| NvdError::NetworkError {
                attempts: config.max_attempts,
                detail: format!("unparseable response body: {e}"),
            })?;
        let fetched = response.vulnerabilities.len();
        for item in &response.vulnerabilities {
            store.insert(meta_from_nvd_item(item));
        }
        let total = response.total_results.unwrap_or(0);
        start_index = response.start_index.unwrap_or(start_index) + fetched;
        if fetched == 0 || start_index >= total {
            return Ok(());
        }
        if config.request_interval_ms > 0 {
            std::thread::sleep(Duration::from_millis(config.request_interval_ms));
        }
    }
}

fn request_with_retry(
    client: &reqwest::blocking::Client,
    config: &FetchConfig,
    api_key: Option<&str>,
    url: &str,
) -> Result<String, NvdError> {
    let attempts = config.max_attempts.max(1);
    let mut last_error = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            let backoff = config.backoff_base_ms.saturating_mul(1 << (attempt - 1));
            std::thread::sleep(Duration::from_millis(backoff));
        }
        let mut request = client.get(url);
        if let Some(key) = api_key {
            request = request.header("apiKey", key);
        }
        match request.send() {
            Ok(response) => {
                let status = response.status();
                if status == reqwest::StatusCode::FORBIDDEN
                    || status == reqwest::StatusCode::TOO_MANY_REQUESTS
                {
                    let retry_after = response
                        .headers()
                        .get("retry-after")
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.parse::<u64>().ok());
                    last_error = Some(NvdError::RateLimited { retry_after });
                    continue;
                }
                if !status.is_success() {
                    last_error = Some(NvdError::NetworkError {
                        attempts: attempt + 1,
                        detail: format!("HTTP {status}"),
                    });
                    continue;
                }
                return response.text().map_err(|e| NvdError::NetworkError {
                    attempts: attempt + 1,
                    detail: e.to_string(),
                });
            }
            Err(e) => {
                last_error = Some(NvdError::NetworkError {
                    attempts: attempt + 1,
                    detail: e.to_string(),
                });
            }
        }
    }
    Err(last_error.unwrap_or(NvdError::NetworkError {
        attempts,
        detail: "no attempts made".to_string(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, body).unwrap();
        path
    }

    const NVD_ITEM: &str = r#"{
        "vulnerabilities": [{
            "cve": {
                "id": "CVE-2021-44228",
                "published": "2021-12-10T10:15:09.143",
                "references": [
                    {"url": "u1"}, {"url": "u2"}, {"url": "u3"}, {"url": "u4"},
                    {"url": "u5"}, {"url": "u6"}, {"url": "u7"}, {"url": "u8"},
                    {"url": "u9"}, {"url": "u10"}, {"url": "u11"}, {"url": "u12"},
                    {"url": "u13"}, {"url": "u14"}, {"url": "u15"}, {"url": "u16"},
                    {"url": "u17"}, {"url": "u18"}, {"url": "u19"}, {"url": "u20"},
                    {"url": "u21"}, {"url": "u22"}, {"url": "u23"}, {"url": "u24"},
                    {"url": "u25"}
                ],
                "weaknesses": [
                    {"description": [{"value": "CWE-502"}]}
                ],
                "metrics": {
                    "cvssMetricV31": [{"cvssData": {"baseScore": 9.8, "baseSeverity": "CRITICAL"}}]
                }
            }
        }]
    }"#;

    #[test]
    fn loads_nvd_api_shaped_item() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "nvd.json", NVD_ITEM);
        let store = load_snapshot(&[path]).unwrap();
        let meta = store.lookup("CVE-2021-44228").unwrap();
        assert_eq!(meta.cvss_base, 9.8);
        assert_eq!(meta.severity, Severity::Critical);
        assert_eq!(meta.published_year, 2021);
        assert_eq!(meta.reference_count, 25);
        assert_eq!(meta.cwe_count(), 1);
        assert_eq!(meta.cwe_ids, vec!["CWE-502"]);
        assert!(!meta.exploited);
    }

    #[test]
    fn missing_cvss_data_imputes_zero_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"vulnerabilities": [{"cve": {"id": "CVE-2019-0001"}}]}"#;
        let path = write_file(&dir, "bare.json", body);
        let store = load_snapshot(&[path]).unwrap();
        let meta = store.lookup("CVE-2019-0001").unwrap();
        assert_eq!(meta.cvss_base, 0.0);
        assert_eq!(meta.severity, Severity::Unknown);
        assert_eq!(meta.severity.one_hot(), [0.0; 4]);
        assert_eq!(meta.published_year, 0);
        assert_eq!(meta.reference_count, 0);
    }

    #[test]
    fn v2_score_maps_to_severity_bands() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"vulnerabilities": [
            {"cve": {"id": "CVE-2010-0001", "metrics": {"cvssMetricV2": [{"cvssData": {"baseScore": 7.5}}]}}},
            {"cve": {"id": "CVE-2010-0002", "metrics": {"cvssMetricV2": [{"cvssData": {"baseScore": 4.0}}]}}},
            {"cve": {"id": "CVE-2010-0003", "metrics": {"cvssMetricV2": [{"cvssData": {"baseScore": 2.1}}]}}}
        ]}"#;
        let path = write_file(&dir, "v2.json", body);
        let store = load_snapshot(&[path]).unwrap();
        assert_eq!(store.lookup("CVE-2010-0001").unwrap().severity, Severity::High);
        assert_eq!(store.lookup("CVE-2010-0002").unwrap().severity, Severity::Medium);
        assert_eq!(store.lookup("CVE-2010-0003").unwrap().severity, Severity::Low);
    }

    #[test]
    fn simplified_format_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"[{
            "cve_id": "CVE-2020-1472",
            "cvss_base": 10.0,
            "severity": "CRITICAL",
            "published_year": 2020,
            "exploited": true,
            "reference_count": 40,
            "cwe_ids": ["CWE-287", "CWE-287"]
        }]"#;
        let path = write_file(&dir, "simple.json", body);
        let store = load_snapshot(&[path]).unwrap();
        let meta = store.lookup("CVE-2020-1472").unwrap();
        assert_eq!(meta.cvss_base, 10.0);
        assert!(meta.exploited);
        assert_eq!(meta.cwe_ids, vec!["CWE-287"]);
        assert_eq!(meta.cwe_count(), 1);

        let out = dir.path().join("out.json");
        write_snapshot(&store, &out).unwrap();
        let reloaded = load_snapshot(&[out]).unwrap();
        assert_eq!(reloaded.lookup("CVE-2020-1472"), store.lookup("CVE-2020-1472"));
    }

    #[test]
    fn later_file_overrides_earlier() {
        let dir = tempfile::tempdir().unwrap();
        let first = write_file(
            &dir,
            "a.json",
            r#"[{"cve_id": "CVE-2020-1472", "cvss_base": 5.0, "severity": "MEDIUM",
                "published_year": 2020, "exploited": false, "reference_count": 1, "cwe_ids": []},
               {"cve_id": "CVE-2020-0601", "cvss_base": 8.1, "severity": "HIGH",
                "published_year": 2020, "exploited": false, "reference_count": 9, "cwe_ids": []}]"#,
        );
        let second = write_file(
            &dir,
            "b.json",
            r#"[{"cve_id": "CVE-2020-1472", "cvss_base": 10.0, "severity": "CRITICAL",
                "published_year": 2020, "exploited": false, "reference_count": 40, "cwe_ids": []}]"#,
        );
        let store = load_snapshot(&[first, second]).unwrap();
        assert_eq!(store.lookup("CVE-2020-1472").unwrap().cvss_base, 10.0);
        assert!(store.lookup("CVE-2020-0601").is_some());
        assert_eq!(store.len(), 2);
        assert_eq!(store.override_count(), 1);
    }

    #[test]
    fn duplicate_within_file_last_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "dup.json",
            r#"[{"cve_id": "CVE-2021-0001", "cvss_base": 1.0, "severity": "LOW",
                "published_year": 2021, "exploited": false, "reference_count": 0, "cwe_ids": []},
               {"cve_id": "CVE-2021-0001", "cvss_base": 9.0, "severity": "CRITICAL",
                "published_year": 2021, "exploited": false, "reference_count": 5, "cwe_ids": []}]"#,
        );
        let store = load_snapshot(&[path]).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.lookup("CVE-2021-0001").unwrap().cvss_base, 9.0);
        assert_eq!(store.override_count(), 1);
    }

    #[test]
    fn lookup_normalizes_case() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "c.json",
            r#"[{"cve_id": "cve-2020-1472", "cvss_base": 10.0, "severity": "CRITICAL",
                "published_year": 2020, "exploited": false, "reference_count": 0, "cwe_ids": []}]"#,
        );
        let store = load_snapshot(&[path]).unwrap();
        assert!(store.lookup("cve-2020-1472").is_some());
        assert!(store.lookup("CVE-2020-1472").is_some());
        assert_eq!(store.ids().next(), Some("CVE-2020-1472"));
    }

    #[test]
    fn digest_is_deterministic_and_content_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_file(&dir, "a.json", "[]");
        let b = write_file(&dir, "b.json", r#"[{"cve_id": "CVE-2020-0001", "cvss_base": 0.0,
            "severity": "UNKNOWN", "published_year": 2020, "exploited": false,
            "reference_count": 0, "cwe_ids": []}]"#);
        let s1 = load_snapshot(&[&a]).unwrap();
        let s2 = load_snapshot(&[&a]).unwrap();
        let s3 = load_snapshot(&[&b]).unwrap();
        assert_eq!(s1.snapshot_digest(), s2.snapshot_digest());
        assert_ne!(s1.snapshot_digest(), s3.snapshot_digest());
        assert_eq!(s1.snapshot_digest().len(), 64);
    }

    #[test]
    fn malformed_snapshot_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "bad.json", "{\"noVulnKey\": 1}");
        assert!(matches!(
            load_snapshot(&[path]),
            Err(NvdError::MalformedSnapshot { .. })
        ));
        let path = write_file(&dir, "notjson.json", "not json");
        assert!(matches!(
            load_snapshot(&[path]),
            Err(NvdError::MalformedSnapshot { .. })
        ));
    }

    #[test]
    fn exploited_list_kev_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "kev.json",
            r#"{"vulnerabilities": [{"cveID": "CVE-2021-26855"}, {"cveID": "cve-2021-27065"}]}"#,
        );
        let ids = load_exploited_list(&path).unwrap();
        assert!(ids.contains("CVE-2021-26855"));
        assert!(ids.contains("CVE-2021-27065"));
        assert_eq!(ids.len(), 2);
    }

    #[test]
    fn exploited_list_plain_array_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let json = write_file(&dir, "ids.json", r#"["CVE-2020-1472"]"#);
        assert!(load_exploited_list(&json).unwrap().contains("CVE-2020-1472"));

        let csv = write_file(
            &dir,
            "kev.csv",
            "cveID,vendorProject,product\nCVE-2021-26855,Microsoft,Exchange\nCVE-2020-1472,Microsoft,Netlogon\n",
        );
        let ids = load_exploited_list(&csv).unwrap();
        assert_eq!(ids.len(), 2);
        assert!(ids.contains("CVE-2021-26855"));

        let bad = write_file(&dir, "bad.csv", "name,product\nfoo,bar\n");
        assert!(matches!(
            load_exploited_list(&bad),
            Err(NvdError::MalformedList { .. })
        ));
    }

    #[test]
    fn apply_exploited_sets_flags_and_reports_coverage() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "s.json",
            r#"[{"cve_id": "CVE-2021-26855", "cvss_base": 9.8, "severity": "CRITICAL",
                "published_year": 2021, "exploited": false, "reference_count": 5, "cwe_ids": []},
               {"cve_id": "CVE-2021-26857", "cvss_base": 7.8, "severity": "HIGH",
                "published_year": 2021, "exploited": false, "reference_count": 4, "cwe_ids": []}]"#,
        );
        let mut store = load_snapshot(&[path]).unwrap();
        let ids: BTreeSet<String> = ["CVE-2021-26855", "CVE-2099-9999"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let coverage = store.apply_exploited(&ids);
        assert_eq!(coverage.listed, 2);
        assert_eq!(coverage.matched, 1);
        assert_eq!(coverage.missing, vec!["CVE-2099-9999"]);
        assert!(store.lookup("CVE-2021-26855").unwrap().exploited);
        assert!(!store.lookup("CVE-2021-26857").unwrap().exploited);

        let empty = BTreeSet::new();
        let coverage = store.apply_exploited(&empty);
        assert_eq!(coverage.listed, 0);
        assert_eq!(coverage.matched, 0);
    }

    #[test]
    fn fetch_empty_id_list_writes_empty_snapshot_without_requests() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("snap.json");
        let config = FetchConfig {
            // Unroutable: any request attempt would error.
            base_url: "http://127.0.0.1:1/rest".to_string(),
            request_interval_ms: 0,
            backoff_base_ms: 1,
            ..FetchConfig::default()
        };
        let written = fetch_live(&[], &config, &out).unwrap();
        assert_eq!(written, 0);
        let store = load_snapshot(&[out]).unwrap();
        assert!(store.is_empty());
    }

    /// Minimal HTTP/1.1 responder: answers `n` connections with `status` and
    /// `body`, recording each request line + headers.
    fn spawn_mock(
        n: usize,
        status: u16,
        extra_headers: &'static str,
        body: String,
    ) -> (String, Arc<Mutex<Vec<String>>>, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen_clone = Arc::clone(&seen);
        let handle = std::thread::spawn(move || {
            for _ in 0..n {
                let (mut stream, _) = match listener.accept() {
                    Ok(pair) => pair,
                    Err(_) => return,
                };
                let mut buf = Vec::new();
                let mut byte = [0u8; 1];
                while !buf.ends_with(b"\r\n\r\n") {
                    match stream.read(&mut byte) {
                        Ok(1) => buf.push(byte[0]),
                        _ => break,
                    }
                }
                seen_clone
                    .lock()
                    .unwrap()
                    .push(String::from_utf8_lossy(&buf).to_string());
                let reason = match status {
                    200 => "OK",
                    403 => "Forbidden",
                    _ => "Error",
                };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\n{extra_headers}Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        (format!("http://{addr}/rest"), seen, handle)
    }

    fn mock_body(ids: &[&str]) -> String {
        let items: Vec<String> = ids
            .iter()
            .map(|id| {
                format!(
                    r#"{{"cve": {{"id": "{id}", "published": "2021-03-02T00:00:00.000",
                        "references": [{{"url": "u"}}],
                        "metrics": {{"cvssMetricV31": [{{"cvssData": {{"baseScore": 9.8, "baseSeverity": "CRITICAL"}}}}]}}}}}}"#
                )
            })
            .collect();
        format!(
            r#"{{"totalResults": {}, "startIndex": 0, "vulnerabilities": [{}]}}"#,
            ids.len(),
            items.join(",")
        )
    }

    #[test]
    fn fetch_batches_ids_when_filter_supported() {
        let ids = ["CVE-2021-26855", "CVE-2021-26857", "CVE-2021-27065"];
        let (url, seen, handle) = spawn_mock(1, 200, "", mock_body(&ids));
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("snap.json");
        let config = FetchConfig {
            base_url: url,
            supports_id_filter: true,
            request_interval_ms: 0,
            backoff_base_ms: 1,
            ..FetchConfig::default()
        };
        let id_vec: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
        let written = fetch_live(&id_vec, &config, &out).unwrap();
        handle.join().unwrap();
        assert_eq!(written, 3);
        let requests = seen.lock().unwrap();
        assert_eq!(requests.len(), 1);
        assert!(requests[0].contains("cveId=CVE-2021-26855,CVE-2021-26857,CVE-2021-27065"));
        let store = load_snapshot(&[out]).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(store.lookup("CVE-2021-26855").unwrap().published_year, 2021);
    }

    #[test]
    fn fetch_without_filter_sends_one_request_per_id() {
        let ids = ["CVE-2020-0001", "CVE-2020-0002"];
        // Each response carries one record; both requests get the same body,
        // which is fine — the second id is simply absent from the mock data.
        let (url, seen, handle) = spawn_mock(2, 200, "", mock_body(&ids[..1]));
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("snap.json");
        let config = FetchConfig {
            base_url: url,
            supports_id_filter: false,
            request_interval_ms: 0,
            backoff_base_ms: 1,
            ..FetchConfig::default()
        };
        let id_vec: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
        fetch_live(&id_vec, &config, &out).unwrap();
        handle.join().unwrap();
        let requests = seen.lock().unwrap();
        assert_eq!(requests.len(), 2);
        assert!(requests[0].contains("cveId=CVE-2020-0001"));
        assert!(requests[1].contains("cveId=CVE-2020-0002"));
    }

    #[test]
    fn forbidden_response_becomes_rate_limited_after_retries() {
        let (url, seen, handle) = spawn_mock(3, 403, "Retry-After: 30\r\n", "{}".to_string());
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("snap.json");
        let config = FetchConfig {
            base_url: url,
            supports_id_filter: true,
            request_interval_ms: 0,
            backoff_base_ms: 1,
            ..FetchConfig::default()
        };
        let err = fetch_live(&["CVE-2020-0001".to_string()], &config, &out).unwrap_err();
        handle.join().unwrap();
        assert!(matches!(
            err,
            NvdError::RateLimited {
                retry_after: Some(30)
            }
        ));
        assert_eq!(seen.lock().unwrap().len(), 3);
    }
}
