//! Applies a star, a library pair and impression counts to a graph and
//! prints what changed.

use etymo::rank::RankScores;
use etymo::simnet::{apply_feedback, build_graph, orient_temporal};
use etymo::vectorize::{RandomProjection, VectorSet};
use etymo::{Document, FeedbackEvent, FeedbackKind, GraphConfig, Impressions, RankParams, TermLexicon, Tokenizer};

fn doc(id: &str, date: &str, body: &str) -> Document {
    serde_json::from_value(serde_json::json!({
        "id": id, "title": "", "authors": [], "venue": "",
        "published": date, "abstract": "", "body": body,
    }))
    .unwrap()
}

fn main() {
    let docs = [
        doc("a", "2015-01-01", "sparse graph ranking pagerank"),
        doc("b", "2016-01-01", "sparse graph ranking citation"),
        doc("c", "2017-01-01", "graph citation network analysis"),
        doc("d", "2018-01-01", "embedding maps of papers"),
    ];
    let tok = Tokenizer::default();
    let lexicon = TermLexicon::build(&docs, &tok).unwrap();
    let vectors = VectorSet::compute(&docs, &lexicon, &tok, &RandomProjection::new(256, 0)).unwrap();
    let config = GraphConfig { alpha: 0.3, mu: 1.0, delta_lib: 0.1, ..GraphConfig::default() };
    let mut graph = build_graph(&vectors, &config).unwrap();
    let print = |label: &str, g: &etymo::SimilarityGraph| {
        println!("{label}:");
        for ((s, t), w) in g.edges() {
            println!("  {s} - {t}  {w:.4}");
        }
    };
    print("before", &graph);

    let dates = docs.iter().map(|d| (d.id.clone(), d.published)).collect();
    let directed = orient_temporal(&graph, &dates).unwrap();
    let ranks = RankScores::compute(&directed, RankParams::default()).unwrap();
    let events = [
        FeedbackEvent::new("ana", FeedbackKind::Star, "a"),
        FeedbackEvent::new("ana", FeedbackKind::LibraryAdd, "a"),
        FeedbackEvent::new("ana", FeedbackKind::LibraryAdd, "d"),
    ];
    let mut impressions = Impressions::new();
    for _ in 0..25 {
        impressions.record_impression("c");
    }
    let report = apply_feedback(&mut graph, &events, &impressions, &ranks, &vectors, &config).unwrap();
    println!("{report:?}");
    print("after", &graph);
}
