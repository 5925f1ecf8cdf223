//! Forward and reverse PageRank on a small star and their blend.

use etymo::rank::RankScores;
use etymo::simnet::SimilarityGraph;
use etymo::RankParams;

fn main() {
    let mut g = SimilarityGraph::directed(["hub", "l1", "l2", "l3", "l4"].map(String::from));
    for (leaf, w) in [("l1", 0.9), ("l2", 0.7), ("l3", 0.6), ("l4", 0.55)] {
        g.set_edge(leaf, "hub", w).unwrap();
    }
    g.set_edge("l2", "l1", 0.52).unwrap();

    let scores = RankScores::compute(&g, RankParams::default()).unwrap();
    println!("{:<4} {:>8} {:>8} {:>8}", "id", "pr", "rpr", "combined");
    for (id, c) in scores.ordered() {
        println!("{id:<4} {:>8.4} {:>8.4} {c:>8.4}", scores.pagerank[id], scores.reverse_pagerank[id]);
    }
}
