//! Links documents whose blended similarity clears the threshold, then
//! orients the edges from newer to older papers.

use etymo::simnet::{build_graph, orient_temporal};
use etymo::vectorize::{RandomProjection, VectorSet};
use etymo::{Document, GraphConfig, TermLexicon, Tokenizer};

fn doc(id: &str, date: &str, body: &str) -> Document {
    serde_json::from_value(serde_json::json!({
        "id": id, "title": "", "authors": [], "venue": "",
        "published": date, "abstract": "", "body": body,
    }))
    .unwrap()
}

fn main() {
    let docs = [
        doc("p1", "2019-01-01", "graph ranking pagerank"),
        doc("p2", "2019-02-01", "graph ranking citation"),
        doc("p3", "2019-03-01", "pagerank citation network"),
        doc("p4", "2019-04-01", "tsne embedding map"),
        doc("p5", "2019-05-01", "embedding map network"),
    ];
    let tok = Tokenizer::default();
    let lexicon = TermLexicon::build(&docs, &tok).unwrap();
    let vectors = VectorSet::compute(&docs, &lexicon, &tok, &RandomProjection::new(256, 0)).unwrap();

    let config = GraphConfig { alpha: 0.2, mu: 1.0, ..GraphConfig::default() };
    let graph = build_graph(&vectors, &config).unwrap();
    println!("{} nodes, {} edges", graph.node_count(), graph.edge_count());

    let dates = docs.iter().map(|d| (d.id.clone(), d.published)).collect();
    let directed = orient_temporal(&graph, &dates).unwrap();
    for ((s, t), w) in directed.edges() {
        println!("{s} -> {t}  {w:.4}");
    }
}
