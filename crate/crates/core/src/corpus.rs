//! Documented attack-chain corpus: loading, pair derivation, negative
//! sampling, and leakage-aware splitting.
//!
//! Chains arrive as JSON-lines records. Every unordered within-chain CVE
//! pair becomes a positive example; negatives are sampled uniformly from the
//! remaining pairs over the corpus CVE universe. Three split strategies are
//! supported: PAIR (shuffle everything), CHAIN (whole chains stay in one
//! fold), and TEMPORAL (older chains train, newer chains test).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{is_cve_id, normalize_cve_id};
use crate::metrics::{fold_sizes, validate_fractions};
use crate::nvd::MetaStore;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed chain file {path} line {line}: {detail}")]
    MalformedChainFile {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("duplicate chain id {0:?}")]
    DuplicateChainId(String),
    #[error("chain {chain_id:?} has {len} CVEs, need at least 2")]
    ChainTooShort { chain_id: String, len: usize },
    #[error("requested {requested} negatives but only {available} candidate pairs exist")]
    InsufficientNegativeSpace { requested: usize, available: usize },
    #[error("negative ratio must be a positive finite number, got {0}")]
    InvalidRatio(f64),
    #[error("unknown split strategy {0:?} (expected PAIR, CHAIN, or TEMPORAL)")]
    UnknownStrategy(String),
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("malformed pair file {path} line {line}: {detail}")]
    MalformedPairFile {
        path: String,
        line: usize,
        detail: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SourceType {
    Disclosure,
    Incident,
}

impl SourceType {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceType::Disclosure => "DISCLOSURE",
            SourceType::Incident => "INCIDENT",
        }
    }
}

/// One documented multi-CVE chain. `year = 0` means unknown until filled
/// from CVE metadata via [`fill_missing_years`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainRecord {
    pub chain_id: String,
    pub source_type: SourceType,
    pub cve_ids: Vec<String>,
    pub reference: String,
    pub year: i64,
}

/// Canonical-ordered labeled CVE pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub cve_a: String,
    pub cve_b: String,
    pub label: u8,
    pub origin: String,
}

impl PairExample {
    pub fn key(&self) -> (&str, &str) {
        (self.cve_a.as_str(), self.cve_b.as_str())
    }
}

/// Lexicographic canonical order: returns (smaller, larger).
pub fn canonical_pair(a: &str, b: &str) -> (String, String) {
    let a = normalize_cve_id(a);
    let b = normalize_cve_id(b);
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Deserialize)]
struct RawChain {
    chain_id: String,
    source_type: String,
    cve_ids: Vec<String>,
    reference: String,
    year: Option<i64>,
}

/// Loads a JSON-lines chain corpus, validating each record.
pub fn load_chains(path: &Path) -> Result<Vec<ChainRecord>, CorpusError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let mut chains = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawChain =
            serde_json::from_str(line).map_err(|e| CorpusError::MalformedChainFile {
                path: display.clone(),
                line: line_no,
                detail: e.to_string(),
            })?;
        let source_type = match raw.source_type.as_str() {
            "DISCLOSURE" => SourceType::Disclosure,
            "INCIDENT" => SourceType::Incident,
            other => {
                return Err(CorpusError::MalformedChainFile {
                    path: display,
                    line: line_no,
                    detail: format!("unknown source_type {other:?}"),
                })
            }
        };
        if !seen_ids.insert(raw.chain_id.clone()) {
            return Err(CorpusError::DuplicateChainId(raw.chain_id));
        }
        if raw.cve_ids.len() < 2 {
            return Err(CorpusError::ChainTooShort {
                chain_id: raw.chain_id,
                len: raw.cve_ids.len(),
            });
        }
        let cve_ids: Vec<String> = raw.cve_ids.iter().map(|id| normalize_cve_id(id)).collect();
        let mut distinct = BTreeSet::new();
        for id in &cve_ids {
            if !is_cve_id(id) {
                return Err(CorpusError::MalformedChainFile {
                    path: display,
                    line: line_no,
                    detail: format!("{id:?} is not a CVE id"),
                });
            }
            if !distinct.insert(id.clone()) {
                return Err(CorpusError::MalformedChainFile {
                    path: display,
                    line: line_no,
                    detail: format!("duplicate member {id:?}"),
                });
            }
        }
        chains.push(ChainRecord {
            chain_id: raw.chain_id,
            source_type,
            cve_ids,
            reference: raw.reference,
            year: raw.year.unwrap_or(0),
        });
    }
    Ok(chains)
}

/// Replaces unknown (zero) chain years with the minimum published year of
/// the chain's members that have metadata.
pub fn fill_missing_years(chains: &mut [ChainRecord], store: &MetaStore) {
    for chain in chains.iter_mut() {
        if chain.year != 0 {
            continue;
        }
        let min_year = chain
            .cve_ids
            .iter()
            .filter_map(|id| store.lookup(id))
            .map(|m| m.published_year)
            .filter(|&y| y > 0)
            .min();
        if let Some(year) = min_year {
            chain.year = year;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthStats {
    pub min: usize,
    pub max: usize,
    pub median: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub count: usize,
    pub by_source: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<LengthStats>,
}

/// Count, per-source breakdown, and chain-length statistics (mean rounded
/// to 2 decimals). Length stats are absent for an empty corpus.
pub fn corpus_stats(chains: &[ChainRecord]) -> CorpusStats {
    let mut by_source = BTreeMap::new();
    for chain in chains {
        *by_source
            .entry(chain.source_type.as_str().to_string())
            .or_insert(0) += 1;
    }
    let length = if chains.is_empty() {
        None
    } else {
        let mut lengths: Vec<usize> = chains.iter().map(|c| c.cve_ids.len()).collect();
        lengths.sort_unstable();
        let n = lengths.len();
        let median = if n % 2 == 1 {
            lengths[n / 2] as f64
        } else {
            (lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0
        };
        let mean = lengths.iter().sum::<usize>() as f64 / n as f64;
        Some(LengthStats {
            min: lengths[0],
            max: lengths[n - 1],
            median,
            mean: (mean * 100.0).round() / 100.0,
        })
    };
    CorpusStats {
        count: chains.len(),
        by_source,
        length,
    }
}

/// All unordered within-chain pairs, canonicalized and deduplicated across
/// chains (first chain wins as origin).
pub fn positive_pairs(chains: &[ChainRecord]) -> Vec<PairExample> {
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::new();
    for chain in chains {
        for i in 0..chain.cve_ids.len() {
            for j in (i + 1)..chain.cve_ids.len() {
                let (a, b) = canonical_pair(&chain.cve_ids[i], &chain.cve_ids[j]);
                if seen.insert((a.clone(), b.clone())) {
                    pairs.push(PairExample {
                        cve_a: a,
                        cve_b: b,
                        label: 1,
                        origin: chain.chain_id.clone(),
                    });
                }
            }
        }
    }
    pairs
}

/// The sorted distinct CVE ids appearing anywhere in the corpus.
pub fn cve_universe(chains: &[ChainRecord]) -> Vec<String> {
    chains
        .iter()
        .flat_map(|c| c.cve_ids.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Samples `round(ratio × |positives|)` negatives uniformly without
/// replacement from the non-positive pairs over the corpus universe.
pub fn sample_negatives(
    chains: &[ChainRecord],
    ratio: f64,
    seed: u64,
) -> Result<Vec<PairExample>, CorpusError> {
    if !ratio.is_finite() || ratio <= 0.0 {
        return Err(CorpusError::InvalidRatio(ratio));
    }
    let positives = positive_pairs(chains);
    let positive_keys: BTreeSet<(String, String)> = positives
        .iter()
        .map(|p| (p.cve_a.clone(), p.cve_b.clone()))
        .collect();
    let universe = cve_universe(chains);
    let mut candidates = Vec::new();
    for i in 0..universe.len() {
        for j in (i + 1)..universe.len() {
            let key = (universe[i].clone(), universe[j].clone());
            if !positive_keys.contains(&key) {
                candidates.push(key);
            }
        }
    }
    let requested = (ratio * positives.len() as f64).round() as usize;
    if candidates.len() < requested {
        return Err(CorpusError::InsufficientNegativeSpace {
            requested,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), requested)
        .into_iter()
        .collect();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| {
            let (a, b) = candidates[i].clone();
            PairExample {
                cve_a: a,
                cve_b: b,
                label: 0,
                origin: "sampled".to_string(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitStrategy {
    Pair,
    Chain,
    Temporal,
}

impl SplitStrategy {
    pub fn parse(s: &str) -> Result<SplitStrategy, CorpusError> {
        match s.to_ascii_uppercase().as_str() {
            "PAIR" => Ok(SplitStrategy::Pair),
            "CHAIN" => Ok(SplitStrategy::Chain),
            "TEMPORAL" => Ok(SplitStrategy::Temporal),
            other => Err(CorpusError::UnknownStrategy(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitStrategy::Pair => "PAIR",
            SplitStrategy::Chain => "CHAIN",
            SplitStrategy::Temporal => "TEMPORAL",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSplit {
    pub train: Vec<PairExample>,
    pub val: Vec<PairExample>,
    pub test: Vec<PairExample>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Fold {
    Train,
    Val,
    Test,
}

/// Splits examples into train/val/test folds.
///
/// PAIR shuffles examples directly. CHAIN assigns whole chains to folds
/// (shuffled by seed): positives follow their origin chain, each negative
/// follows the chain of its lexicographically smaller member, unattached
/// examples go to train. TEMPORAL orders chains by year, earliest to train.
pub fn split_pairs(
    examples: &[PairExample],
    chains: &[ChainRecord],
    strategy: SplitStrategy,
    fractions: [f64; 3],
    seed: u64,
) -> Result<PairSplit, CorpusError> {
    validate_fractions(fractions)
        .map_err(|e| CorpusError::DegenerateSplit(e.to_string()))?;
    let folds: Vec<Fold> = match strategy {
        SplitStrategy::Pair => {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let (n_train, n_val, _) = fold_sizes(examples.len(), fractions);
            let mut folds = vec![Fold::Train; examples.len()];
            for (rank, &example_idx) in order.iter().enumerate() {
                folds[example_idx] = if rank < n_train {
                    Fold::Train
                } else if rank < n_train + n_val {
                    Fold::Val
                } else {
                    Fold::Test
                };
            }
            folds
        }
        SplitStrategy::Chain | SplitStrategy::Temporal => {
            let mut chain_order: Vec<usize> = (0..chains.len()).collect();
            if strategy == SplitStrategy::Chain {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rand::seq::SliceRandom::shuffle(chain_order.as_mut_slice(), &mut rng);
            } else {
                chain_order
                    .sort_by_key(|&i| (chains[i].year, chains[i].chain_id.clone()));
            }
            let (n_train, n_val, _) = fold_sizes(chains.len(), fractions);
            let mut chain_fold: BTreeMap<&str, Fold> = BTreeMap::new();
            for (rank, &chain_idx) in chain_order.iter().enumerate() {
                let fold = if rank < n_train {
                    Fold::Train
                } else if rank < n_train + n_val {
                    Fold::Val
                } else {
                    Fold::Test
                };
                chain_fold.insert(chains[chain_idx].chain_id.as_str(), fold);
            }
            // First chain (corpus order) containing each CVE, for negatives.
            let mut first_chain_of: BTreeMap<&str, &str> = BTreeMap::new();
            for chain in chains {
                for id in &chain.cve_ids {
                    first_chain_of
                        .entry(id.as_str())
                        .or_insert(chain.chain_id.as_str());
                }
            }
            examples
                .iter()
                .map(|example| {
                    let owner = if example.label == 1 {
                        chain_fold.get(example.origin.as_str())
                    } else {
                        first_chain_of
                            .get(example.cve_a.as_str())
                            .and_then(|chain_id| chain_fold.get(chain_id))
                    };
                    owner.copied().unwrap_or(Fold::Train)
                })
                .collect()
        }
    };

    let mut split = PairSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (example, fold) in examples.iter().zip(&folds) {
        match fold {
            Fold::Train => split.train.push(example.clone()),
            Fold::Val => split.val.push(example.clone()),
            Fold::Test => split.test.push(example.clone()),
        }
    }
    for (name, fold) in [
        ("train", &split.train),
        ("val", &split.val),
        ("test", &split.test),
    ] {
        if fold.is_empty() {
            return Err(CorpusError::DegenerateSplit(format!(
                "{name} fold is empty ({} examples, strategy {})",
                examples.len(),
                strategy.as_str()
            )));
        }
    }
    Ok(split)
}

/// Writes pairs as CSV with header `cve_a,cve_b,label,origin`.
pub fn write_pairs_csv(pairs: &[PairExample], path: &Path) -> Result<(), CorpusError> {
    let display = path.display().to_string();
    let mut writer = csv::Writer::from_writer(Vec::new());
    for pair in pairs {
        writer
            .serialize(pair)
            .map_err(|e| CorpusError::MalformedPairFile {
                path: display.clone(),
                line: 0,
                detail: e.to_string(),
            })?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| CorpusError::MalformedPairFile {
            path: display.clone(),
            line: 0,
            detail: e.to_string(),
        })?;
    std::fs::write(path, bytes).map_err(|source| CorpusError::Io {
        path: display,
        source,
    })
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<PairExample>, CorpusError> {
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let mut pairs = Vec::new();
    for (i, row) in reader.deserialize::<PairExample>().enumerate() {
        let pair = row.map_err(|e| CorpusError::MalformedPairFile {
            path: display.clone(),
            line: i + 2,
            detail: e.to_string(),
        })?;
        if pair.label > 1 {
            return Err(CorpusError::MalformedPairFile {
                path: display,
                line: i + 2,
                detail: format!("label must be 0 or 1, got {}", pair.label),
            });
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nvd::{CveMeta, Severity};

    fn chain(id: &str, source: SourceType, cves: &[&str], year: i64) -> ChainRecord {
        ChainRecord {
            chain_id: id.to_string(),
            source_type: source,
            cve_ids: cves.iter().map(|s| s.to_string()).collect(),
            reference: format!("ref-{id}"),
            year,
        }
    }

    fn write_jsonl(dir: &tempfile::TempDir, name: &str, lines: &[&str]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn loads_valid_chains_including_length_four() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_jsonl(&dir, "chains.jsonl", &[
            r#"{"chain_id": "proxylogon", "source_type": "INCIDENT", "cve_ids": ["CVE-2021-26855", "CVE-2021-26857", "CVE-2021-26858", "CVE-2021-27065"], "reference": "MSRC blog 2021", "year": 2021}"#,
            r#"{"chain_id": "pair", "source_type": "DISCLOSURE", "cve_ids": ["cve-2020-0001", "CVE-2020-0002"], "reference": "advisory", "year": 2020}"#,
        ]);
        let chains = load_chains(&path).unwrap();
        assert_eq!(chains.len(), 2);
        assert_eq!(chains[0].cve_ids.len(), 4);
        assert_eq!(chains[0].source_type, SourceType::Incident);
        assert_eq!(chains[1].cve_ids[0], "CVE-2020-0001");
    }

    #[test]
    fn load_rejects_bad_records() {
        let dir = tempfile::tempdir().unwrap();
        let short = write_jsonl(&dir, "short.jsonl", &[
            r#"{"chain_id": "x", "source_type": "DISCLOSURE", "cve_ids": ["CVE-2020-0001"], "reference": "r", "year": 2020}"#,
        ]);
        assert!(matches!(
            load_chains(&short),
            Err(CorpusError::ChainTooShort { len: 1, .. })
        ));

        let dup = write_jsonl(&dir, "dup.jsonl", &[
            r#"{"chain_id": "x", "source_type": "DISCLOSURE", "cve_ids": ["CVE-2020-0001", "CVE-2020-0002"], "reference": "r", "year": 2020}"#,
            r#"{"chain_id": "x", "source_type": "DISCLOSURE", "cve_ids": ["CVE-2020-0003", "CVE-2020-0004"], "reference": "r", "year": 2020}"#,
        ]);
        assert!(matches!(
            load_chains(&dup),
            Err(CorpusError::DuplicateChainId(id)) if id == "x"
        ));

        let bad_json = write_jsonl(&dir, "bad.jsonl", &["{not json"]);
        assert!(matches!(
            load_chains(&bad_json),
            Err(CorpusError::MalformedChainFile { line: 1, .. })
        ));

        let dup_member = write_jsonl(&dir, "dupm.jsonl", &[
            r#"{"chain_id": "x", "source_type": "DISCLOSURE", "cve_ids": ["CVE-2020-0001", "CVE-2020-0001"], "reference": "r", "year": 2020}"#,
        ]);
        assert!(matches!(
            load_chains(&dup_member),
            Err(CorpusError::MalformedChainFile { .. })
        ));

        let not_cve = write_jsonl(&dir, "ghsa.jsonl", &[
            r#"{"chain_id": "x", "source_type": "DISCLOSURE", "cve_ids": ["GHSA-xxxx", "CVE-2020-0001"], "reference": "r", "year": 2020}"#,
        ]);
        assert!(matches!(
            load_chains(&not_cve),
            Err(CorpusError::MalformedChainFile { .. })
        ));

        let bad_source = write_jsonl(&dir, "src.jsonl", &[
            r#"{"chain_id": "x", "source_type": "RUMOR", "cve_ids": ["CVE-2020-0001", "CVE-2020-0002"], "reference": "r", "year": 2020}"#,
        ]);
        assert!(matches!(
            load_chains(&bad_source),
            Err(CorpusError::MalformedChainFile { .. })
        ));
    }

    #[test]
    fn stats_empty_and_hand_example() {
        let stats = corpus_stats(&[]);
        assert_eq!(stats.count, 0);
        assert!(stats.length.is_none());
        let json = serde_json::to_string(&stats).unwrap();
        assert!(!json.contains("length"));

        let chains = vec![
            chain("a", SourceType::Disclosure, &["CVE-2020-0001", "CVE-2020-0002"], 2020),
            chain("b", SourceType::Disclosure, &["CVE-2020-0003", "CVE-2020-0004"], 2020),
            chain(
                "c",
                SourceType::Incident,
                &["CVE-2020-0005", "CVE-2020-0006", "CVE-2020-0007", "CVE-2020-0008"],
                2021,
            ),
        ];
        let stats = corpus_stats(&chains);
        assert_eq!(stats.count, 3);
        assert_eq!(stats.by_source["DISCLOSURE"], 2);
        assert_eq!(stats.by_source["INCIDENT"], 1);
        let length = stats.length.unwrap();
        assert_eq!(length.min, 2);
        assert_eq!(length.max, 4);
        assert_eq!(length.median, 2.0);
        assert_eq!(length.mean, 2.67);
    }

    #[test]
    fn positive_pairs_enumerate_combinations() {
        let chains = vec![chain(
            "abc",
            SourceType::Disclosure,
            &["CVE-2020-0003", "CVE-2020-0001", "CVE-2020-0002"],
            2020,
        )];
        let pairs = positive_pairs(&chains);
        assert_eq!(pairs.len(), 3);
        for pair in &pairs {
            assert!(pair.cve_a < pair.cve_b);
            assert_eq!(pair.label, 1);
            assert_eq!(pair.origin, "abc");
        }

        let two = vec![chain("ab", SourceType::Disclosure, &["CVE-2020-0001", "CVE-2020-0002"], 2020)];
        assert_eq!(positive_pairs(&two).len(), 1);

        let four = vec![chain(
            "quad",
            SourceType::Incident,
            &["CVE-2021-0001", "CVE-2021-0002", "CVE-2021-0003", "CVE-2021-0004"],
            2021,
        )];
        assert_eq!(positive_pairs(&four).len(), 6);
    }

    #[test]
    fn positive_count_matches_binomial_sum_minus_cross_chain_dups() {
        let chains = vec![
            chain("a", SourceType::Disclosure, &["CVE-2020-0001", "CVE-2020-0002", "CVE-2020-0003"], 2020),
            chain("b", SourceType::Disclosure, &["CVE-2020-0004", "CVE-2020-0005"], 2020),
            chain("c", SourceType::Incident, &["CVE-2020-0006", "CVE-2020-0007", "CVE-2020-0008", "CVE-2020-0009"], 2021),
        ];
        let expected: usize = chains
            .iter()
            .map(|c| c.cve_ids.len() * (c.cve_ids.len() - 1) / 2)
            .sum();
        assert_eq!(positive_pairs(&chains).len(), expected);
    }

    #[test]
    fn duplicate_pair_across_chains_keeps_first_origin() {
        let chains = vec![
            chain("first", SourceType::Disclosure, &["CVE-2020-0001", "CVE-2020-0002"], 2020),
            chain("second", SourceType::Incident, &["CVE-2020-0002", "CVE-2020-0001", "CVE-2020-0003"], 2021),
        ];
        let pairs = positive_pairs(&chains);
        assert_eq!(pairs.len(), 3);
        let ab = pairs
            .iter()
            .find(|p| p.cve_a == "CVE-2020-0001" && p.cve_b == "CVE-2020-0002")
            .unwrap();
        assert_eq!(ab.origin, "first");
    }

    #[test]
    fn negatives_fill_tiny_candidate_space_exactly() {
        // Universe {A,B,C} with one chain [A,B]: candidates are (A,C),(B,C).
        let chains = vec![
            chain("ab", SourceType::Disclosure, &["CVE-2020-0001", "CVE-2020-0002"], 2020),
            chain("c", SourceType::Disclosure, &["CVE-2020-0003", "CVE-2020-0001"], 2020),
        ];
        // Second chain adds C to the universe but also pairs (A,C); rebuild:
        // positives = {(A,B),(A,C)}; candidates = {(B,C)} only. Use a cleaner
        // setup instead: one chain [A,B] and C brought in via another chain
        // would always add pairs. So test the documented example directly.
        let one = vec![chain("ab", SourceType::Disclosure, &["CVE-2020-0001", "CVE-2020-0002"], 2020)];
        // Universe from chains alone is {A,B}; no candidates exist, so ratio
        // 2 with 1 positive requests 2 from 0 → error.
        assert!(matches!(
            sample_negatives(&one, 2.0, 7),
            Err(CorpusError::InsufficientNegativeSpace {
                requested: 2,
                available: 0
            })
        ));
        // With the second chain the space has exactly the right size only
        // for ratio 0.5 (1 negative from {(B,C)}).
        let negatives = sample_negatives(&chains, 0.5, 7).unwrap();
        assert_eq!(negatives.len(), 1);
        assert_eq!(negatives[0].cve_a, "CVE-2020-0002");
        assert_eq!(negatives[0].cve_b, "CVE-2020-0003");
        assert_eq!(negatives[0].label, 0);
        assert_eq!(negatives[0].origin, "sampled");
    }

    #[test]
    fn negative_ratio_and_determinism() {
        let chains: Vec<ChainRecord> = (0..6)
            .map(|i| {
                let a = format!("CVE-2020-{:04}", 2 * i);
                let b = format!("CVE-2020-{:04}", 2 * i + 1);
                ChainRecord {
                    chain_id: format!("c{i}"),
                    source_type: SourceType::Disclosure,
                    cve_ids: vec![a, b],
                    reference: "r".to_string(),
                    year: 2020,
                }
            })
            .collect();
        let positives = positive_pairs(&chains);
        let negatives = sample_negatives(&chains, 2.0, 42).unwrap();
        assert_eq!(negatives.len(), 2 * positives.len());

        let again = sample_negatives(&chains, 2.0, 42).unwrap();
        assert_eq!(negatives, again);
        let other_seed = sample_negatives(&chains, 2.0, 43).unwrap();
        assert_ne!(negatives, other_seed);

        let positive_keys: BTreeSet<(String, String)> = positives
            .iter()
            .map(|p| (p.cve_a.clone(), p.cve_b.clone()))
            .collect();
        let mut seen = BTreeSet::new();
        for negative in &negatives {
            assert!(negative.cve_a < negative.cve_b);
            let key = (negative.cve_a.clone(), negative.cve_b.clone());
            assert!(!positive_keys.contains(&key));
            assert!(seen.insert(key));
        }

        assert!(matches!(
            sample_negatives(&chains, -1.0, 1),
            Err(CorpusError::InvalidRatio(_))
        ));
    }

    #[test]
    fn pair_split_sizes_and_determinism() {
        let examples: Vec<PairExample> = (0..10)
            .map(|i| PairExample {
                cve_a: format!("CVE-2020-{i:04}"),
                cve_b: format!("CVE-2021-{i:04}"),
                label: (i % 2) as u8,
                origin: "x".to_string(),
            })
            .collect();
        let split =
            split_pairs(&examples, &[], SplitStrategy::Pair, [0.7, 0.15, 0.15], 5).unwrap();
        assert_eq!(split.train.len(), 7);
        assert_eq!(split.val.len(), 1);
        assert_eq!(split.test.len(), 2);

        let again =
            split_pairs(&examples, &[], SplitStrategy::Pair, [0.7, 0.15, 0.15], 5).unwrap();
        assert_eq!(split, again);

        let mut all: Vec<&PairExample> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .collect();
        all.sort_by_key(|p| (p.cve_a.clone(), p.cve_b.clone()));
        assert_eq!(all.len(), 10);
        let mut original: Vec<&PairExample> = examples.iter().collect();
        original.sort_by_key(|p| (p.cve_a.clone(), p.cve_b.clone()));
        assert_eq!(all, original);
    }

    #[test]
    fn chain_split_keeps_chains_whole() {
        let chains: Vec<ChainRecord> = (0..10)
            .map(|i| {
                ChainRecord {
                    chain_id: format!("c{i}"),
                    source_type: SourceType::Disclosure,
                    cve_ids: vec![
                        format!("CVE-2020-{:04}", 3 * i),
                        format!("CVE-2020-{:04}", 3 * i + 1),
                        format!("CVE-2020-{:04}", 3 * i + 2),
                    ],
                    reference: "r".to_string(),
                    year: 2015 + i,
                }
            })
            .collect();
        let mut examples = positive_pairs(&chains);
        examples.extend(sample_negatives(&chains, 1.0, 9).unwrap());
        let split =
            split_pairs(&examples, &chains, SplitStrategy::Chain, [0.7, 0.15, 0.15], 3).unwrap();

        let fold_of_chain = |fold: &[PairExample]| -> BTreeSet<String> {
            fold.iter()
                .filter(|p| p.label == 1)
                .map(|p| p.origin.clone())
                .collect()
        };
        let train_chains = fold_of_chain(&split.train);
        let val_chains = fold_of_chain(&split.val);
        let test_chains = fold_of_chain(&split.test);
        assert!(train_chains.is_disjoint(&val_chains));
        assert!(train_chains.is_disjoint(&test_chains));
        assert!(val_chains.is_disjoint(&test_chains));

        // Negatives follow the fold of their smaller member's first chain.
        let chain_fold: BTreeMap<&str, &str> = train_chains
            .iter()
            .map(|c| (c.as_str(), "train"))
            .chain(val_chains.iter().map(|c| (c.as_str(), "val")))
            .chain(test_chains.iter().map(|c| (c.as_str(), "test")))
            .collect();
        let first_chain_of = |cve: &str| -> &str {
            chains
                .iter()
                .find(|c| c.cve_ids.iter().any(|id| id == cve))
                .map(|c| c.chain_id.as_str())
                .unwrap()
        };
        for (name, fold) in [("train", &split.train), ("val", &split.val), ("test", &split.test)]
        {
            for example in fold.iter().filter(|p| p.label == 0) {
                let owner = first_chain_of(&example.cve_a);
                if let Some(&expected) = chain_fold.get(owner) {
                    assert_eq!(expected, name);
                }
            }
        }
    }

    #[test]
    fn temporal_split_orders_chains_by_year() {
        let chains: Vec<ChainRecord> = (0..10)
            .map(|i| {
                ChainRecord {
                    chain_id: format!("c{i}"),
                    source_type: SourceType::Disclosure,
                    cve_ids: vec![
                        format!("CVE-2020-{:04}", 2 * i),
                        format!("CVE-2020-{:04}", 2 * i + 1),
                    ],
                    reference: "r".to_string(),
                    // Shuffled years so corpus order differs from time order.
                    year: 2010 + ((7 * i) % 10),
                }
            })
            .collect();
        let examples = positive_pairs(&chains);
        let split =
            split_pairs(&examples, &chains, SplitStrategy::Temporal, [0.7, 0.15, 0.15], 0)
                .unwrap();
        let year_of = |origin: &str| chains.iter().find(|c| c.chain_id == origin).unwrap().year;
        let max_train = split.train.iter().map(|p| year_of(&p.origin)).max().unwrap();
        let min_test = split.test.iter().map(|p| year_of(&p.origin)).min().unwrap();
        assert!(max_train <= min_test);
    }

    #[test]
    fn degenerate_and_unknown_strategies_error() {
        let examples: Vec<PairExample> = (0..3)
            .map(|i| PairExample {
                cve_a: format!("CVE-2020-{i:04}"),
                cve_b: format!("CVE-2021-{i:04}"),
                label: 1,
                origin: "c".to_string(),
            })
            .collect();
        assert!(matches!(
            split_pairs(&examples, &[], SplitStrategy::Pair, [0.7, 0.15, 0.15], 1),
            Err(CorpusError::DegenerateSplit(_))
        ));
        assert!(matches!(
            SplitStrategy::parse("KFOLD"),
            Err(CorpusError::UnknownStrategy(_))
        ));
        assert_eq!(SplitStrategy::parse("chain").unwrap(), SplitStrategy::Chain);
    }

    #[test]
    fn pairs_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        let pairs = vec![
            PairExample {
                cve_a: "CVE-2020-0001".to_string(),
                cve_b: "CVE-2020-0002".to_string(),
                label: 1,
                origin: "chain-1".to_string(),
            },
            PairExample {
                cve_a: "CVE-2020-0003".to_string(),
                cve_b: "CVE-2020-0004".to_string(),
                label: 0,
                origin: "sampled".to_string(),
            },
        ];
        write_pairs_csv(&pairs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("cve_a,cve_b,label,origin\n"));
        let reread = read_pairs_csv(&path).unwrap();
        assert_eq!(reread, pairs);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "cve_a,cve_b,label,origin\nCVE-1,CVE-2,7,x\n").unwrap();
        assert!(matches!(
            read_pairs_csv(&bad),
            Err(CorpusError::MalformedPairFile { .. })
        ));
    }

    #[test]
    fn missing_years_filled_from_store() {
        let mut chains = vec![chain(
            "nodate",
            SourceType::Disclosure,
            &["CVE-2019-0001", "CVE-2021-0002"],
            0,
        )];
        let mut store = MetaStore::empty();
        store.insert(CveMeta {
            cve_id: "CVE-2019-0001".to_string(),
            cvss_base: 5.0,
            severity: Severity::Medium,
            published_year: 2019,
            exploited: false,
            reference_count: 1,
            cwe_ids: vec![],
        });
        store.insert(CveMeta {
            cve_id: "CVE-2021-0002".to_string(),
            cvss_base: 5.0,
            severity: Severity::Medium,
            published_year: 2021,
            exploited: false,
            reference_count: 1,
            cwe_ids: vec![],
        });
        fill_missing_years(&mut chains, &store);
        assert_eq!(chains[0].year, 2019);

        let mut untouched = vec![chain("dated", SourceType::Incident, &["CVE-2019-0001", "CVE-2021-0002"], 2023)];
        fill_missing_years(&mut untouched, &store);
        assert_eq!(untouched[0].year, 2023);
    }
}
