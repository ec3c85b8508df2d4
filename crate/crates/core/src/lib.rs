//! Toolkit for turning vulnerability-enriched CycloneDX SBOMs into typed
//! evidence graphs and learning over them.
//!
//! The pipeline has four stages:
//!
//! 1. [`ingest`] parses enriched CycloneDX documents and [`nvd`] loads CVE
//!    metadata snapshots plus a known-exploited list.
//! 2. [`graph`] builds heterogeneous evidence graphs (component / CVE / CWE
//!    nodes with typed edges) and per-type feature matrices.
//! 3. [`hgat`] classifies components with a two-layer heterogeneous graph
//!    attention network; [`predictor`] scores CVE pairs for co-exploitation
//!    with a small MLP over metadata features, trained on the documented
//!    chain corpus managed by [`corpus`].
//! 4. [`cascade`] composes high-scoring pairs into candidate chains and
//!    projects chains onto SBOM dependency subgraphs for triage.
//!
//! [`tensor`] is the shared dense-tensor / reverse-mode autodiff core both
//! models train on, [`metrics`] holds evaluation metrics and dataset splits,
//! and [`synth`] generates planted-rule corpora used for verification.

pub mod cascade;
pub mod corpus;
pub mod graph;
pub mod hgat;
pub mod ingest;
pub mod metrics;
pub mod nvd;
pub mod predictor;
pub mod synth;
pub mod tensor;
