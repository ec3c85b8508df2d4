//! End-to-end check that the classifier learns a purely relational rule and
//! loses it when the carrying edge type is masked at inference.

use std::collections::BTreeMap;

use sbom_cascade::graph::{mask_edge_type, EvidenceGraph, Relation};
use sbom_cascade::hgat::{evaluate_hgat, predict_components, train_hgat, HgatConfig};
use sbom_cascade::metrics::split_sboms;
use sbom_cascade::synth::{generate_synth_corpus, SynthSpec};

fn fold<'a>(graphs: &BTreeMap<&str, &'a EvidenceGraph>, ids: &[String]) -> Vec<EvidenceGraph> {
    ids.iter().map(|id| graphs[id.as_str()].clone()).collect()
}

#[test]
fn planted_rule_survives_training_and_dies_under_dependency_masking() {
    let spec = SynthSpec::default();
    assert!(spec.graphs >= 60);
    let corpus = generate_synth_corpus(&spec).unwrap();
    let by_id: BTreeMap<&str, &EvidenceGraph> = corpus
        .graphs
        .iter()
        .map(|g| (g.sbom_id.as_str(), g))
        .collect();
    let ids: Vec<String> = corpus.graphs.iter().map(|g| g.sbom_id.clone()).collect();
    let split = split_sboms(&ids, [0.7, 0.15, 0.15], 5).unwrap();
    let train = fold(&by_id, &split.train);
    let val = fold(&by_id, &split.val);
    let test = fold(&by_id, &split.test);

    let config = HgatConfig::default();
    let outcome = train_hgat(&train, &val, &config).unwrap();

    let full = evaluate_hgat(&outcome.checkpoint, &test, None).unwrap();
    assert!(
        full.f1.unwrap_or(0.0) >= 0.85,
        "test F1 {:?} below 0.85 (accuracy {:.4})",
        full.f1,
        full.accuracy
    );

    let masked = evaluate_hgat(&outcome.checkpoint, &test, Some(Relation::DependsOn)).unwrap();
    assert!(
        masked.recall.unwrap_or(0.0) <= 0.05,
        "masked recall {:?} above 0.05",
        masked.recall
    );

    let test_labels: Vec<bool> = test
        .iter()
        .flat_map(|g| g.labels.iter().map(|&l| l == 1))
        .collect();
    let negative_rate =
        test_labels.iter().filter(|&&l| !l).count() as f64 / test_labels.len() as f64;
    assert!(
        (masked.accuracy - negative_rate).abs() <= 0.02,
        "masked accuracy {:.4} not within 0.02 of negative-class rate {:.4}",
        masked.accuracy,
        negative_rate
    );

    // Per-graph prediction counts collapse the same way when the edges are
    // stripped from the graph itself instead of masked in the evaluator.
    let mut positives_full = 0usize;
    let mut positives_masked = 0usize;
    for graph in &test {
        positives_full += predict_components(&outcome.checkpoint, graph)
            .unwrap()
            .iter()
            .filter(|p| p.label == 1)
            .count();
        let stripped = mask_edge_type(graph, Relation::DependsOn);
        positives_masked += predict_components(&outcome.checkpoint, &stripped)
            .unwrap()
            .iter()
            .filter(|p| p.label == 1)
            .count();
    }
    assert!(positives_full > 0);
    assert!(
        positives_masked < positives_full / 4,
        "masked positives {positives_masked} did not collapse from {positives_full}"
    );
}
