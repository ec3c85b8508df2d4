//! `sbom-cascade` — offline pipeline from vulnerability-enriched CycloneDX
//! SBOMs to ranked attack-chain predictions.
//!
//! Every subcommand reads an optional JSON run configuration (`--config`),
//! applies flag overrides, writes the resolved config plus its artifacts
//! under the output directory, and prints a one-line JSON summary to stdout.
//! Errors are one-line JSON on stderr with exit codes: 2 usage, 3 input,
//! 4 runtime.

mod config;
mod pipeline;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> CliError {
        CliError::Input(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> CliError {
        CliError::Runtime(msg.into())
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Input(_) => "input",
            CliError::Runtime(_) => "runtime",
        }
    }

    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "sbom-cascade",
    version,
    about = "Evidence graphs, component classification, and attack-chain triage for enriched SBOMs"
)]
struct Cli {
    /// JSON run-configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory (overrides `paths.output_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Master seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse enriched CycloneDX SBOMs and write ingest statistics.
    Ingest {
        /// Directory of CycloneDX JSON documents (overrides `paths.sbom_dir`).
        #[arg(long, value_name = "DIR")]
        sbom_dir: Option<PathBuf>,
    },
    /// Build typed evidence graphs from SBOMs plus CVE metadata.
    BuildGraphs {
        #[arg(long, value_name = "DIR")]
        sbom_dir: Option<PathBuf>,
        /// NVD snapshot file(s) (overrides `paths.nvd_snapshots`).
        #[arg(long, value_name = "FILE")]
        snapshot: Vec<PathBuf>,
        /// Known-exploited list (overrides `paths.kev_list`).
        #[arg(long, value_name = "FILE")]
        kev: Option<PathBuf>,
        /// Feature leakage policy: STRICT or PAPER_LITERAL.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Split built graphs into train/validation/test SBOM id sets.
    Split {
        /// Comma-separated train,val,test fractions (e.g. 0.7,0.15,0.15).
        #[arg(long)]
        fractions: Option<String>,
    },
    /// Train the component classifier on the train/validation folds.
    TrainHgat {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate a classifier checkpoint on one fold.
    EvalHgat {
        /// Checkpoint path (default: <out>/hgat.ckpt.json).
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Fold to score: train, val, or test (default test).
        #[arg(long)]
        fold: Option<String>,
        /// Empty one edge type at inference: DEPENDS_ON, HAS_VULNERABILITY,
        /// or HAS_CWE.
        #[arg(long, value_name = "RELATION")]
        mask_relation: Option<String>,
    },
    /// Derive labeled CVE pairs from the chain corpus.
    Pairs {
        /// Chain corpus JSONL file (overrides `paths.chain_corpus`).
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        /// Negatives per positive.
        #[arg(long)]
        negative_ratio: Option<f64>,
    },
    /// Train the co-exploitation MLP on labeled pairs.
    TrainMlp {
        /// Pair split strategy: PAIR, CHAIN, or TEMPORAL.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long, value_name = "FILE")]
        snapshot: Vec<PathBuf>,
        #[arg(long, value_name = "FILE")]
        kev: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Score pairs with a trained MLP and write the ranking.
    Rank {
        /// Checkpoint path (default: <out>/mlp.ckpt.json).
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Pairs CSV to score (default: <out>/pairs.csv).
        #[arg(long, value_name = "FILE")]
        pairs: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        snapshot: Vec<PathBuf>,
        #[arg(long, value_name = "FILE")]
        kev: Option<PathBuf>,
    },
    /// Compose high-scoring pairs into candidate chains.
    Compose {
        /// Link-probability threshold in (0,1).
        #[arg(long)]
        tau: Option<f64>,
        /// Maximum chain length in CVEs.
        #[arg(long)]
        max_len: Option<usize>,
        /// Ranking CSV to read (default: <out>/ranking.csv).
        #[arg(long, value_name = "FILE")]
        ranking: Option<PathBuf>,
    },
    /// Project candidate chains onto each SBOM's dependency graph.
    Project {
        /// Chains file (default: <out>/chains.json).
        #[arg(long, value_name = "FILE")]
        chains: Option<PathBuf>,
        /// Graphs directory (default: <out>/graphs).
        #[arg(long, value_name = "DIR")]
        graphs_dir: Option<PathBuf>,
    },
    /// Render the triage report in JSON, text, and DOT.
    Report {
        /// Candidate chains listed in the report header.
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Generate a synthetic planted-rule corpus of evidence graphs.
    Synth {
        /// Number of graphs.
        #[arg(long)]
        graphs: Option<usize>,
        #[arg(long)]
        components_min: Option<usize>,
        #[arg(long)]
        components_max: Option<usize>,
        /// Forward-edge probability in [0,1).
        #[arg(long)]
        density: Option<f64>,
        /// Fraction of components seeded with findings, in (0,1).
        #[arg(long)]
        seed_fraction: Option<f64>,
        /// Planted labeling rule id.
        #[arg(long)]
        rule: Option<String>,
    },
    /// Verify model gradients against central finite differences.
    Gradcheck {
        /// Elements sampled per parameter tensor.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Fetch CVE metadata from the NVD API into a snapshot file.
    FetchNvd {
        /// Comma-separated CVE ids to fetch.
        #[arg(long)]
        ids: Option<String>,
        /// Also fetch every CVE mentioned in the chain corpus.
        #[arg(long)]
        from_corpus: bool,
        /// Snapshot output path (default: <out>/nvd_snapshot.json).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// API base URL.
        #[arg(long)]
        base_url: Option<String>,
        /// Milliseconds to wait between requests.
        #[arg(long)]
        interval_ms: Option<u64>,
        /// Send all ids in one comma-separated `cveId` query.
        #[arg(long)]
        id_filter: bool,
    },
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn report_failure(err: &CliError) -> i32 {
    let line = serde_json::json!({ "kind": err.kind(), "error": one_line(&err.to_string()) });
    eprintln!("{line}");
    err.code()
}

fn main() {
    // Die quietly on SIGPIPE like other Unix filters instead of panicking
    // when stdout is a closed pipe (e.g. `sbom-cascade --help | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            std::process::exit(report_failure(&CliError::usage(e.to_string())));
        }
    };
    if let Err(err) = run(cli) {
        std::process::exit(report_failure(&err));
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = config::load_config(cli.config.as_deref())?;
    if let Some(dir) = cli.out_dir {
        config.paths.output_dir = dir;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    match cli.command {
        Command::Ingest { sbom_dir } => {
            if let Some(dir) = sbom_dir {
                config.paths.sbom_dir = Some(dir);
            }
            config::write_resolved(&config)?;
            pipeline::ingest(&config)
        }
        Command::BuildGraphs {
            sbom_dir,
            snapshot,
            kev,
            policy,
        } => {
            if let Some(dir) = sbom_dir {
                config.paths.sbom_dir = Some(dir);
            }
            if !snapshot.is_empty() {
                config.paths.nvd_snapshots = snapshot;
            }
            if let Some(kev) = kev {
                config.paths.kev_list = Some(kev);
            }
            if let Some(policy) = policy {
                config.hgat.leakage_policy = pipeline::parse_policy(&policy)?;
            }
            config::write_resolved(&config)?;
            pipeline::build_graphs(&config)
        }
        Command::Split { fractions } => {
            if let Some(raw) = fractions {
                config.split.fractions = pipeline::parse_fractions(&raw)?;
            }
            config::write_resolved(&config)?;
            pipeline::split(&config)
        }
        Command::TrainHgat { epochs, lr } => {
            if let Some(epochs) = epochs {
                config.hgat.max_epochs = epochs;
            }
            if let Some(lr) = lr {
                config.hgat.lr = lr;
            }
            config::write_resolved(&config)?;
            pipeline::train_hgat(&config)
        }
        Command::EvalHgat {
            checkpoint,
            fold,
            mask_relation,
        } => {
            config::write_resolved(&config)?;
            pipeline::eval_hgat(&config, checkpoint, fold.as_deref(), mask_relation.as_deref())
        }
        Command::Pairs {
            corpus,
            negative_ratio,
        } => {
            if let Some(corpus) = corpus {
                config.paths.chain_corpus = Some(corpus);
            }
            if let Some(ratio) = negative_ratio {
                config.negative_ratio = ratio;
            }
            config::write_resolved(&config)?;
            pipeline::pairs(&config)
        }
        Command::TrainMlp {
            strategy,
            snapshot,
            kev,
            epochs,
            patience,
        } => {
            if let Some(strategy) = strategy {
                config.split.strategy = strategy;
            }
            if !snapshot.is_empty() {
                config.paths.nvd_snapshots = snapshot;
            }
            if let Some(kev) = kev {
                config.paths.kev_list = Some(kev);
            }
            if let Some(epochs) = epochs {
                config.mlp.max_epochs = epochs;
            }
            if let Some(patience) = patience {
                config.mlp.patience = patience;
            }
            config::write_resolved(&config)?;
            pipeline::train_mlp(&config)
        }
        Command::Rank {
            checkpoint,
            pairs,
            snapshot,
            kev,
        } => {
            if !snapshot.is_empty() {
                config.paths.nvd_snapshots = snapshot;
            }
            if let Some(kev) = kev {
                config.paths.kev_list = Some(kev);
            }
            config::write_resolved(&config)?;
            pipeline::rank(&config, checkpoint, pairs)
        }
        Command::Compose {
            tau,
            max_len,
            ranking,
        } => {
            if let Some(tau) = tau {
                config.tau = tau;
            }
            if let Some(max_len) = max_len {
                config.max_chain_len = max_len;
            }
            config::write_resolved(&config)?;
            pipeline::compose(&config, ranking)
        }
        Command::Project { chains, graphs_dir } => {
            config::write_resolved(&config)?;
            pipeline::project(&config, chains, graphs_dir)
        }
        Command::Report { top_k } => {
            if let Some(top_k) = top_k {
                config.top_k = top_k;
            }
            config::write_resolved(&config)?;
            pipeline::report(&config)
        }
        Command::Synth {
            graphs,
            components_min,
            components_max,
            density,
            seed_fraction,
            rule,
        } => {
            config::write_resolved(&config)?;
            pipeline::synth(
                &config,
                pipeline::SynthOverrides {
                    graphs,
                    components_min,
                    components_max,
                    density,
                    seed_fraction,
                    rule,
                },
            )
        }
        Command::Gradcheck { samples } => {
            config::write_resolved(&config)?;
            pipeline::gradcheck(&config, samples.unwrap_or(2))
        }
        Command::FetchNvd {
            ids,
            from_corpus,
            out,
            base_url,
            interval_ms,
            id_filter,
        } => {
            config::write_resolved(&config)?;
            pipeline::fetch_nvd(
                &config,
                ids.as_deref(),
                from_corpus,
                out,
                base_url,
                interval_ms,
                id_filter,
            )
        }
    }
}
