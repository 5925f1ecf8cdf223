//! One function per acceptance criterion. Each returns `Ok(detail)` when the
//! criterion holds and `Err(reason)` otherwise; oracles here are written
//! independently of the library code they check.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use etymo::corpus::{FeedbackEvent, FeedbackKind, ImpressionCounts, Impressions, PubDate};
use etymo::layout::{conditional_affinities, joint_affinities, kl_gradient, SquareMatrix};
use etymo::pipeline::{self, BuildTarget, Pipeline};
use etymo::rank::{pagerank, reverse_pagerank, PowerIteration, RankParams, RankScores};
use etymo::server::{self, ApiSnapshot, AppState};
use etymo::simnet::{apply_feedback, build_graph, insert_paper, orient_temporal, GraphConfig, SimilarityGraph};
use etymo::vectorize::{DenseVector, RandomProjection, SparseVector, TermLexicon, Tokenizer, VectorSet};
use etymo::EngineConfig;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;

use super::*;

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within_runtime(start: Instant, limit_secs: f64) -> Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < limit_secs, "took {secs:.2}s, limit {limit_secs}s");
    Ok(secs)
}

// ---------------------------------------------------------------- TF-IDF

/// Brute-force TF-IDF straight from the formula: sublinear tf, smoothed idf,
/// L2 normalization.
pub fn oracle_tfidf(docs: &[Vec<&str>]) -> Vec<BTreeMap<String, f64>> {
    let n = docs.len() as f64;
    let mut df: BTreeMap<&str, f64> = BTreeMap::new();
    for d in docs {
        let uniq: BTreeSet<&str> = d.iter().copied().collect();
        for t in uniq {
            *df.entry(t).or_default() += 1.0;
        }
    }
    docs.iter()
        .map(|d| {
            let mut tf: BTreeMap<&str, f64> = BTreeMap::new();
            for t in d {
                *tf.entry(t).or_default() += 1.0;
            }
            let raw: BTreeMap<String, f64> = tf
                .iter()
                .map(|(t, c)| {
                    let idf = ((1.0 + n) / (1.0 + df[t])).ln() + 1.0;
                    (t.to_string(), (1.0 + c.ln()) * idf)
                })
                .collect();
            let norm = raw.values().map(|w| w * w).sum::<f64>().sqrt();
            raw.into_iter().map(|(t, w)| (t, w / norm)).collect()
        })
        .collect()
}

pub fn oracle_cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(t, w)| b.get(t).map(|v| w * v)).sum();
    let na = a.values().map(|w| w * w).sum::<f64>().sqrt();
    let nb = b.values().map(|w| w * w).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn tfidf_oracle() -> Outcome {
    let start = Instant::now();
    let docs = toy3();
    let tok = Tokenizer::default();
    let lexicon = TermLexicon::build(&docs, &tok).map_err(|e| e.to_string())?;
    let vectors = VectorSet::compute(&docs, &lexicon, &tok, &RandomProjection::new(256, 0))
        .map_err(|e| e.to_string())?;
    let oracle = oracle_tfidf(&[vec!["cat", "cat", "dog"], vec!["dog", "fish"], vec!["fish", "fish", "fish"]]);
    let ids = ["A", "B", "C"];
    let mut worst: f64 = 0.0;
    for (id, expected) in ids.iter().zip(&oracle) {
        let got = &vectors.tfidf[*id];
        ensure!(got.entries().len() == expected.len(), "{id}: {} terms, oracle has {}", got.entries().len(), expected.len());
        for (term, w) in expected {
            let tid = lexicon.get(term).ok_or(format!("{term} missing from lexicon"))?.term_id;
            let g = got.get(tid).ok_or(format!("{id}: no weight for {term}"))?;
            worst = worst.max((g - w).abs());
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let got = vectors.tfidf[ids[i]].cosine(&vectors.tfidf[ids[j]]).map_err(|e| e.to_string())?;
            worst = worst.max((got - oracle_cosine(&oracle[i], &oracle[j])).abs());
        }
    }
    ensure!(worst <= 1e-12, "max deviation {worst:e} > 1e-12");
    let secs = within_runtime(start, 1.0)?;
    Ok(format!("max deviation {worst:.1e}, {secs:.3}s"))
}

// ---------------------------------------------------------------- PageRank

pub type Arc3 = (usize, usize, f64);

pub fn random_digraph(rng: &mut ChaCha8Rng) -> (usize, Vec<Arc3>) {
    let n = rng.gen_range(1..=10);
    let p = rng.gen_range(0.1..0.6);
    let mut arcs = Vec::new();
    for s in 0..n {
        for t in 0..n {
            if s != t && rng.gen_bool(p) {
                arcs.push((s, t, rng.gen_range(0.05..1.0)));
            }
        }
    }
    (n, arcs)
}

pub fn node_name(i: usize) -> String {
    format!("n{i:02}")
}

pub fn to_graph(n: usize, arcs: &[Arc3]) -> SimilarityGraph {
    let mut g = SimilarityGraph::directed((0..n).map(node_name));
    for &(s, t, w) in arcs {
        g.set_edge(&node_name(s), &node_name(t), w).unwrap();
    }
    g
}

/// Every iterate of the power method, computed with the full dense
/// transition matrix.
pub fn dense_pagerank_iterates(n: usize, arcs: &[Arc3], damping: f64, iterations: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for &(s, t, w) in arcs {
        m[s][t] += w;
    }
    let out: Vec<f64> = m.iter().map(|row| row.iter().sum()).collect();
    for s in 0..n {
        if out[s] > 0.0 {
            for t in 0..n {
                m[s][t] /= out[s];
            }
        }
    }
    let nf = n as f64;
    let mut x = vec![1.0 / nf; n];
    let mut all = Vec::new();
    for _ in 0..iterations {
        let dangling: f64 = (0..n).filter(|&s| out[s] == 0.0).map(|s| x[s]).sum();
        let next: Vec<f64> = (0..n)
            .map(|t| {
                let pulled: f64 = (0..n).map(|s| m[s][t] * x[s]).sum();
                damping * (pulled + dangling / nf) + (1.0 - damping) / nf
            })
            .collect();
        all.push(next.clone());
        x = next;
    }
    all
}

pub fn reversed_arcs(arcs: &[Arc3]) -> Vec<Arc3> {
    arcs.iter().map(|&(s, t, w)| (t, s, w)).collect()
}

pub fn digraph_fixtures() -> Vec<(usize, Vec<Arc3>)> {
    let mut rng = rng(2024);
    let mut out: Vec<_> = (0..50).map(|_| random_digraph(&mut rng)).collect();
    out.push(star_fixture());
    out
}

/// Five leaves pointing at one hub (node 0).
pub fn star_fixture() -> (usize, Vec<Arc3>) {
    (6, (1..6).map(|leaf| (leaf, 0, 1.0)).collect())
}

pub fn pagerank_oracle() -> Outcome {
    let start = Instant::now();
    let damping = 0.85;
    let iterations = 10;
    let mut worst: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    let fixtures = digraph_fixtures();
    for (idx, (n, arcs)) in fixtures.iter().take(50).enumerate() {
        let graph = to_graph(*n, arcs);
        let it = PowerIteration::new(&graph, damping).map_err(|e| e.to_string())?;
        let oracle = dense_pagerank_iterates(*n, arcs, damping, iterations);
        let mut k_seen = 0;
        let mut bad = None;
        it.run_observed(iterations, None, |k, x| {
            k_seen = k;
            let s: f64 = x.iter().sum();
            worst_sum = worst_sum.max((s - 1.0).abs());
            for (a, b) in x.iter().zip(&oracle[k - 1]) {
                let d = (a - b).abs();
                worst = worst.max(d);
                if d > 1e-12 && bad.is_none() {
                    bad = Some(k);
                }
            }
        });
        ensure!(k_seen == iterations, "graph {idx}: ran {k_seen} iterations");
        if let Some(k) = bad {
            return Err(format!("graph {idx}: iterate {k} deviates from dense oracle"));
        }
    }
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    ensure!(worst_sum <= 1e-9, "iterate sum off by {worst_sum:e}");
    let secs = within_runtime(start, 5.0)?;
    Ok(format!("50 graphs, max deviation {worst:.1e}, max |sum-1| {worst_sum:.1e}, {secs:.3}s"))
}

pub fn reverse_pagerank_identity() -> Outcome {
    for (idx, (n, arcs)) in digraph_fixtures().iter().enumerate() {
        let graph = to_graph(*n, arcs);
        let rev_built = to_graph(*n, &reversed_arcs(arcs));
        let a = reverse_pagerank(&graph, 0.85, 10).map_err(|e| e.to_string())?;
        let b = pagerank(&rev_built, 0.85, 10).map_err(|e| e.to_string())?;
        ensure!(a == b, "graph {idx}: reverse_pagerank differs from pagerank of the reversed graph");
        let oracle = dense_pagerank_iterates(*n, &reversed_arcs(arcs), 0.85, 10);
        for (i, v) in oracle.last().unwrap().iter().enumerate() {
            ensure!((a[&node_name(i)] - v).abs() <= 1e-12, "graph {idx}: dense oracle mismatch");
        }
    }
    let (n, arcs) = star_fixture();
    let g = to_graph(n, &arcs);
    let pr = pagerank(&g, 0.85, 10).map_err(|e| e.to_string())?;
    let rpr = reverse_pagerank(&g, 0.85, 10).map_err(|e| e.to_string())?;
    let hub = node_name(0);
    ensure!(rpr[&hub] < pr[&hub], "star: rpr(hub) {} not below pr(hub) {}", rpr[&hub], pr[&hub]);
    Ok(format!("51 graphs identical bit for bit; star hub pr {:.4} rpr {:.4}", pr[&hub], rpr[&hub]))
}

pub fn ten_iteration_adequacy() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut over = 0;
    let mut cases = 0;
    for (n, arcs) in digraph_fixtures() {
        let g = to_graph(n, &arcs);
        for graph in [g.clone(), g.reversed()] {
            let short = pagerank(&graph, 0.85, 10).map_err(|e| e.to_string())?;
            let long = pagerank(&graph, 0.85, 200).map_err(|e| e.to_string())?;
            let l1: f64 = short.values().zip(long.values()).map(|(a, b)| (a - b).abs()).sum();
            worst = worst.max(l1);
            cases += 1;
            if l1 >= 1e-2 {
                over += 1;
            }
        }
    }
    ensure!(over == 0, "{over} of {cases} pagerank runs have L1(10 vs 200 iterations) >= 1e-2, worst {worst:.3e}");
    Ok(format!("worst L1(10 vs 200 iterations) {worst:.2e} over {cases} runs"))
}

// ---------------------------------------------------------------- graph

pub fn oracle_dense_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn oracle_sparse_cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    let am: BTreeMap<u32, f64> = a.entries().iter().copied().collect();
    let bm: BTreeMap<u32, f64> = b.entries().iter().copied().collect();
    let dot: f64 = am.iter().filter_map(|(t, w)| bm.get(t).map(|v| w * v)).sum();
    let na = am.values().map(|w| w * w).sum::<f64>().sqrt();
    let nb = bm.values().map(|w| w * w).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn oracle_similarity(v: &VectorSet, a: &str, b: &str, mu: f64) -> f64 {
    mu * oracle_sparse_cosine(&v.tfidf[a], &v.tfidf[b])
        + (1.0 - mu) * oracle_dense_cosine(v.dense[a].components(), v.dense[b].components())
}

/// All pairs above `alpha`, weights capped at 1.
pub fn oracle_edges(v: &VectorSet, config: &GraphConfig) -> BTreeMap<(String, String), f64> {
    let ids: Vec<&str> = v.ids().collect();
    let mut out = BTreeMap::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let s = oracle_similarity(v, ids[i], ids[j], config.mu);
            if s > config.alpha {
                out.insert((ids[i].to_string(), ids[j].to_string()), s.min(1.0));
            }
        }
    }
    out
}

pub fn vectorize(docs: &[etymo::Document]) -> VectorSet {
    let tok = Tokenizer::default();
    let lexicon = TermLexicon::build(docs, &tok).unwrap();
    VectorSet::compute(docs, &lexicon, &tok, &RandomProjection::new(256, 0)).unwrap()
}

pub fn edge_map(g: &SimilarityGraph) -> BTreeMap<(String, String), f64> {
    g.edges().map(|((a, b), w)| ((a.to_string(), b.to_string()), w)).collect()
}

pub fn same_edges(got: &BTreeMap<(String, String), f64>, want: &BTreeMap<(String, String), f64>) -> Result<(), String> {
    let gk: BTreeSet<_> = got.keys().collect();
    let wk: BTreeSet<_> = want.keys().collect();
    ensure!(gk == wk, "edge sets differ: extra {:?}, missing {:?}", gk.difference(&wk).collect::<Vec<_>>(), wk.difference(&gk).collect::<Vec<_>>());
    for (k, w) in want {
        ensure!((got[k] - w).abs() <= 1e-12, "edge {k:?}: weight {} vs oracle {w}", got[k]);
    }
    Ok(())
}

pub fn dates_of(docs: &[etymo::Document]) -> BTreeMap<String, PubDate> {
    docs.iter().map(|d| (d.id.clone(), d.published)).collect()
}

/// Checks insert_paper against the oracle for `k = |V|` and `k = 3`.
pub fn check_insert(docs: &[etymo::Document], vectors: &VectorSet) -> Result<(), String> {
    let (new_doc, base_docs) = docs.split_last().unwrap();
    let mut base = vectors.clone();
    base.tfidf.remove(&new_doc.id);
    base.dense.remove(&new_doc.id);
    let cfg = GraphConfig::default();
    let base_graph = build_graph(&base, &cfg).map_err(|e| e.to_string())?;
    let directed = orient_temporal(&base_graph, &dates_of(base_docs)).map_err(|e| e.to_string())?;
    let ranks = RankScores::compute(&directed, RankParams::default()).map_err(|e| e.to_string())?;

    let mut by_rank: Vec<(&String, f64)> = ranks.combined.iter().map(|(k, v)| (k, *v)).collect();
    by_rank.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(b.0)));

    for k in [base_docs.len(), 3] {
        let subset: BTreeSet<&str> = by_rank.iter().take(k).map(|(id, _)| id.as_str()).collect();
        let mut want: BTreeMap<String, f64> = BTreeMap::new();
        for other in &subset {
            let s = oracle_similarity(vectors, &new_doc.id, other, cfg.mu);
            if s > cfg.alpha {
                want.insert(other.to_string(), s.min(1.0));
            }
        }
        let mut graph = base_graph.clone();
        let config = GraphConfig { k, ..cfg };
        let links = insert_paper(&mut graph, &ranks, &new_doc.id, vectors, &config).map_err(|e| e.to_string())?;
        let got: BTreeSet<&str> = links.iter().map(String::as_str).collect();
        let want_ids: BTreeSet<&str> = want.keys().map(String::as_str).collect();
        ensure!(got == want_ids, "k={k}: linked {got:?}, oracle {want_ids:?}");
        for (other, w) in &want {
            let g = graph.weight(&new_doc.id, other).unwrap();
            ensure!((g - w).abs() <= 1e-12, "k={k}: weight to {other} is {g}, oracle {w}");
        }
        if k == base_docs.len() {
            let full = build_graph(vectors, &cfg).map_err(|e| e.to_string())?;
            let full_links: BTreeSet<&str> = full.neighbors(&new_doc.id).into_iter().map(|(n, _)| n).collect();
            ensure!(got == full_links, "k=|V| differs from full rebuild");
        }
    }
    Ok(())
}

pub fn graph_build_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(77);
    let mut edges = 0;
    for round in 0..20 {
        let n = if round == 0 { 6 } else { rng.gen_range(5..=30) };
        let docs = random_corpus(&mut rng, n);
        let vectors = vectorize(&docs);
        let graph = build_graph(&vectors, &GraphConfig::default()).map_err(|e| e.to_string())?;
        let want = oracle_edges(&vectors, &GraphConfig::default());
        same_edges(&edge_map(&graph), &want).map_err(|e| format!("corpus {round}: {e}"))?;
        edges += want.len();
        check_insert(&docs, &vectors).map_err(|e| format!("corpus {round}: {e}"))?;
    }
    let secs = within_runtime(start, 10.0)?;
    Ok(format!("20 corpora, {edges} edges, insert k=|V| and k=3 agree, {secs:.2}s"))
}

// ---------------------------------------------------------------- feedback

/// Vectors whose similarity (at any mu) is the cosine between 2-D unit
/// directions at the given angles in degrees.
pub fn angle_vectors(items: &[(&str, f64)]) -> VectorSet {
    let mut set = VectorSet::default();
    for &(id, deg) in items {
        let (s, c) = deg.to_radians().sin_cos();
        set.insert(id.to_string(), SparseVector::from_sorted(vec![(0, c), (1, s)]), DenseVector::new(vec![c, s]));
    }
    set
}

pub fn flat_ranks(ids: &[&str], combined: &[f64]) -> RankScores {
    let map: BTreeMap<String, f64> = ids.iter().zip(combined).map(|(k, v)| (k.to_string(), *v)).collect();
    RankScores {
        pagerank: map.clone(),
        reverse_pagerank: map.clone(),
        combined: map,
        params: RankParams::default(),
    }
}

fn hand_graph(nodes: &[&str], edges: &[(&str, &str, f64)]) -> SimilarityGraph {
    let mut g = SimilarityGraph::undirected(nodes.iter().map(|s| s.to_string()));
    for &(a, b, w) in edges {
        g.set_edge(a, b, w).unwrap();
    }
    g
}

fn close(got: Option<f64>, want: f64, what: &str) -> Result<(), String> {
    match got {
        Some(g) if (g - want).abs() <= 1e-12 => Ok(()),
        other => Err(format!("{what}: got {other:?}, oracle {want}")),
    }
}

pub fn feedback_rules() -> Outcome {
    let ids = ["a", "b", "c", "e", "f"];
    let deg = |c: f64| c.acos().to_degrees();
    let vectors = angle_vectors(&[("a", 0.0), ("b", deg(0.6)), ("c", deg(0.95)), ("e", deg(0.48)), ("f", deg(0.30))]);
    let ranks = flat_ranks(&ids, &[1.0, 0.8, 0.6, 0.4, 0.2]);
    let base = || hand_graph(&ids, &[("a", "b", 0.6), ("a", "c", 0.95), ("b", "c", 0.4)]);
    let cfg = GraphConfig::default();
    let none = Impressions::new();
    let sim = |x: &str, y: &str| oracle_similarity(&vectors, x, y, cfg.mu);

    // Rule 1, one star: 0.6 -> 0.63.
    let mut g = base();
    apply_feedback(&mut g, &[FeedbackEvent::new("u1", FeedbackKind::Star, "a")], &none, &ranks, &vectors, &cfg)
        .map_err(|e| e.to_string())?;
    close(g.weight("a", "b"), 0.6 * 1.05, "one star a-b")?;
    close(g.weight("a", "c"), 0.95 * 1.05, "one star a-c")?;
    close(g.weight("a", "e"), sim("a", "e"), "one star: threshold 0.475 links e")?;
    ensure!(g.weight("a", "f").is_none(), "one star: f (0.30) linked");

    // Two stars: cap at 1, threshold 0.45 links e but not f.
    let mut g = base();
    let stars = [
        FeedbackEvent::new("u1", FeedbackKind::Star, "a"),
        FeedbackEvent::new("u2", FeedbackKind::Star, "a"),
    ];
    apply_feedback(&mut g, &stars, &none, &ranks, &vectors, &cfg).map_err(|e| e.to_string())?;
    close(g.weight("a", "b"), 0.6 * 1.05 * 1.05, "two stars a-b")?;
    close(g.weight("a", "c"), 1.0, "two stars a-c capped")?;
    close(g.weight("b", "c"), 0.4, "two stars b-c untouched")?;
    close(g.weight("a", "e"), sim("a", "e"), "two stars new edge a-e")?;
    ensure!(g.weight("a", "f").is_none(), "two stars: f (0.30) linked");

    // Twenty stars: threshold floors at alpha/2 = 0.25, so f joins.
    let mut g = base();
    let many: Vec<FeedbackEvent> = (0..20).map(|i| FeedbackEvent::new(format!("u{i}"), FeedbackKind::Star, "a")).collect();
    apply_feedback(&mut g, &many, &none, &ranks, &vectors, &cfg).map_err(|e| e.to_string())?;
    close(g.weight("a", "f"), sim("a", "f"), "floored threshold a-f")?;

    // Rule 2: library {a, b, e}: a-b bumped, absent pairs created at 0.05
    // and pruned under the default floor, kept under a lower one.
    let lib: Vec<FeedbackEvent> = ["a", "b", "e"]
        .iter()
        .map(|d| FeedbackEvent::new("reader", FeedbackKind::LibraryAdd, *d))
        .collect();
    let mut g = base();
    apply_feedback(&mut g, &lib, &none, &ranks, &vectors, &cfg).map_err(|e| e.to_string())?;
    close(g.weight("a", "b"), 0.65, "library a-b")?;
    ensure!(g.weight("a", "e").is_none() && g.weight("b", "e").is_none(), "default prune floor must drop 0.05 edges");
    let low_floor = GraphConfig { prune_floor: 0.01, ..cfg };
    let mut g = base();
    apply_feedback(&mut g, &lib, &none, &ranks, &vectors, &low_floor).map_err(|e| e.to_string())?;
    close(g.weight("a", "e"), 0.05, "library created a-e")?;
    close(g.weight("b", "e"), 0.05, "library created b-e")?;
    let mut g = hand_graph(&ids, &[("a", "b", 0.98)]);
    apply_feedback(&mut g, &lib, &none, &ranks, &vectors, &cfg).map_err(|e| e.to_string())?;
    close(g.weight("a", "b"), 1.0, "library cap")?;

    // Rule 3: a has 25 impressions and no clicks; b too few impressions;
    // c clicks at 5%.
    let mut imp = Impressions::new();
    imp.set("a", ImpressionCounts { impressions: 25, clicks: 0 });
    imp.set("b", ImpressionCounts { impressions: 19, clicks: 0 });
    imp.set("c", ImpressionCounts { impressions: 100, clicks: 5 });
    let mut g = hand_graph(&ids, &[("a", "b", 0.6), ("a", "c", 0.95), ("b", "c", 0.4), ("a", "f", 0.06)]);
    apply_feedback(&mut g, &[], &imp, &ranks, &vectors, &cfg).map_err(|e| e.to_string())?;
    close(g.weight("a", "b"), 0.6 * 0.8, "demoted a-b")?;
    close(g.weight("a", "c"), 0.95 * 0.8, "demoted a-c")?;
    close(g.weight("b", "c"), 0.4, "b-c untouched")?;
    ensure!(g.weight("a", "f").is_none(), "0.048 edge must be pruned");
    // Outside top_R nothing is demoted.
    let mut g = base();
    let narrow = GraphConfig { top_r: 1, ..cfg };
    imp.set("a", ImpressionCounts { impressions: 0, clicks: 0 });
    imp.set("b", ImpressionCounts { impressions: 50, clicks: 0 });
    apply_feedback(&mut g, &[], &imp, &ranks, &vectors, &narrow).map_err(|e| e.to_string())?;
    close(g.weight("a", "b"), 0.6, "b outside top_R")?;

    // No events, no impressions: unchanged.
    let mut g = base();
    apply_feedback(&mut g, &[], &none, &ranks, &vectors, &cfg).map_err(|e| e.to_string())?;
    ensure!(edge_map(&g) == edge_map(&base()), "identity case changed the graph");
    Ok("star bump/cap/threshold, library bump/create/prune/cap, CTR demotion/prune all match".into())
}

// ---------------------------------------------------------------- orientation

pub fn temporal_orientation() -> Outcome {
    let mut rng = rng(9);
    let mut arcs_checked = 0;
    let mut ties = 0;
    for round in 0..40 {
        let n = rng.gen_range(2..15);
        let dates: BTreeMap<String, PubDate> = (0..n)
            .map(|i| (node_name(i), PubDate::ymd(2010 + rng.gen_range(0..4), 1, 1).unwrap()))
            .collect();
        let mut g = SimilarityGraph::undirected((0..n).map(node_name));
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(0.4) {
                    g.set_edge(&node_name(a), &node_name(b), rng.gen_range(0.5..1.0)).unwrap();
                }
            }
        }
        let d = orient_temporal(&g, &dates).map_err(|e| e.to_string())?;
        let mut expected = BTreeMap::new();
        for ((a, b), w) in g.edges() {
            if dates[a] >= dates[b] {
                expected.insert((a.to_string(), b.to_string()), w);
            }
            if dates[b] >= dates[a] {
                expected.insert((b.to_string(), a.to_string()), w);
            }
            if dates[a] == dates[b] {
                ties += 1;
            }
        }
        for ((s, t), _) in d.edges() {
            ensure!(dates[s] >= dates[t], "round {round}: arc {s}->{t} points old to new");
        }
        ensure!(edge_map(&d) == expected, "round {round}: arc set differs from oracle");
        arcs_checked += expected.len();
    }
    ensure!(ties > 0, "fixtures produced no tied dates");
    Ok(format!("40 graphs, {arcs_checked} arcs, {ties} tied pairs doubled"))
}

// ---------------------------------------------------------------- t-SNE

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect()).collect()
}

/// KL(P‖Q) with Student-t Q, from the definition.
pub fn oracle_kl(p: &SquareMatrix, y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut num = vec![vec![0.0; n]; n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d2 = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                num[i][j] = 1.0 / (1.0 + d2);
                z += num[i][j];
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p.get(i, j);
            if i != j && pij > 0.0 {
                kl += pij * (pij / (num[i][j] / z)).ln();
            }
        }
    }
    kl
}

pub fn entropy_bits(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.log2()).sum::<f64>()
}

pub fn tsne_gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(31);
    let (n, dim, h) = (10, 5, 1e-5);
    let mut worst_rel: f64 = 0.0;
    let mut worst_entropy: f64 = 0.0;
    for _ in 0..5 {
        let points = random_points(&mut rng, n, dim);
        let perplexity = 3.0;
        let cond = conditional_affinities(&points, perplexity).map_err(|e| e.to_string())?;
        ensure!(cond.warnings.is_empty(), "bandwidth warnings on generic points");
        for i in 0..n {
            worst_entropy = worst_entropy.max((entropy_bits(cond.conditional.row(i)) - perplexity.log2()).abs());
        }
        let p = joint_affinities(&cond.conditional);
        let y: Vec<[f64; 2]> = (0..n)
            .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let grad = kl_gradient(&p, &y, 1.0);
        for i in 0..n {
            for d in 0..2 {
                let mut plus = y.clone();
                let mut minus = y.clone();
                plus[i][d] += h;
                minus[i][d] -= h;
                let fd = (oracle_kl(&p, &plus) - oracle_kl(&p, &minus)) / (2.0 * h);
                let a = grad[i][d];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                worst_rel = worst_rel.max(rel);
            }
        }
    }
    ensure!(worst_rel < 1e-4, "worst relative gradient error {worst_rel:e}");
    ensure!(worst_entropy <= 1e-5, "worst entropy miss {worst_entropy:e} bits");
    let secs = within_runtime(start, 10.0)?;
    Ok(format!("worst relative error {worst_rel:.1e}, worst entropy miss {worst_entropy:.1e} bits, {secs:.2}s"))
}

// ---------------------------------------------------------------- CLI

pub fn etymo_bin() -> &'static str {
    env!("CARGO_BIN_EXE_etymo")
}

pub fn run_cli(data: &Path, args: &[&str]) -> std::process::Output {
    Command::new(etymo_bin())
        .arg("--data")
        .arg(data)
        .args(args)
        .env_remove("ETYMO_DATA")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn etymo")
}

pub fn cli_ok(data: &Path, args: &[&str]) -> Result<String, String> {
    let out = run_cli(data, args);
    ensure!(
        out.status.success(),
        "etymo {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Fixture corpus ingested and fully built through the CLI.
pub fn built_fixture(root: &Path) -> Result<std::path::PathBuf, String> {
    let input = root.join("fixture.jsonl");
    write_jsonl(&input, &reorder_fixture());
    let data = root.join("data");
    cli_ok(&data, &["ingest", input.to_str().unwrap()])?;
    cli_ok(&data, &["build"])?;
    Ok(data)
}

pub fn table_reorder() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = built_fixture(tmp.path())?;
    let parse = |s: String| -> Result<Vec<Value>, String> {
        serde_json::from_str::<Vec<Value>>(&s).map_err(|e| e.to_string())
    };
    let plain = parse(cli_ok(&data, &["search", REORDER_QUERY, "--no-network-rating", "--json"])?)?;
    let rated = parse(cli_ok(&data, &["search", REORDER_QUERY, "--json"])?)?;
    let first = |v: &[Value]| v.first().and_then(|r| r["doc_id"].as_str()).unwrap_or("").to_string();
    ensure!(first(&plain) == "T", "text-only search ranks {} first", first(&plain));
    ensure!(first(&rated) == "S", "rated search ranks {} first", first(&rated));

    // Arithmetic oracle on the served numbers.
    let pipeline = Pipeline::open(&data, EngineConfig::default()).map_err(|e| e.to_string())?;
    let ranks = pipeline.load_ranks().map_err(|e| e.to_string())?;
    let top = ranks.ordered()[0].0.to_string();
    ensure!(top == "S", "highest combined rating is {top}, not S");
    let text = |id: &str| {
        plain.iter().find(|r| r["doc_id"] == id).and_then(|r| r["text_score"].as_f64()).unwrap_or(0.0)
    };
    let (ts, tt) = (text("S"), text("T"));
    let (cs, ct) = (ranks.combined["S"], ranks.combined["T"]);
    ensure!(tt > ts, "T's text score {tt} does not beat S's {ts}");
    ensure!(tt < ts * (1.0 + cs) / (1.0 + ct), "fixture inequality fails");
    Ok(format!("off: T first (text {tt:.4} vs S {ts:.4}); on: S first (combined S {cs:.3}, T {ct:.3})"))
}

// ---------------------------------------------------------------- pipeline

pub const ARTIFACTS: [&str; 7] = [
    pipeline::LEXICON_FILE,
    pipeline::TFIDF_FILE,
    pipeline::DENSE_FILE,
    pipeline::INDEX_FILE,
    pipeline::GRAPH_FILE,
    pipeline::RANKS_FILE,
    pipeline::LAYOUT_FILE,
];

fn build_with_feedback(root: &Path) -> Result<BTreeMap<&'static str, String>, String> {
    let input = root.join("in.jsonl");
    write_jsonl(&input, &reorder_fixture());
    let p = Pipeline::open(root.join("data"), EngineConfig::default()).map_err(|e| e.to_string())?;
    p.ingest(&input).map_err(|e| e.to_string())?;
    let ts = "2024-01-02T03:04:05Z".parse().unwrap();
    for (user, kind, doc) in [
        ("u1", FeedbackKind::Star, "D03"),
        ("u1", FeedbackKind::LibraryAdd, "D04"),
        ("u1", FeedbackKind::LibraryAdd, "D05"),
        ("u2", FeedbackKind::Star, "T"),
    ] {
        p.store()
            .append_feedback(FeedbackEvent::new(user, kind, doc).at(ts))
            .map_err(|e| e.to_string())?;
    }
    p.build(BuildTarget::All, false).map_err(|e| e.to_string())?;
    ARTIFACTS
        .iter()
        .map(|name| {
            let hash = pipeline::hash_file(&root.join("data").join(name))
                .map_err(|e| e.to_string())?
                .ok_or(format!("{name} missing"))?;
            Ok((*name, hash))
        })
        .collect()
}

pub fn pipeline_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ha = build_with_feedback(a.path())?;
    let hb = build_with_feedback(b.path())?;
    for name in ARTIFACTS {
        ensure!(ha[name] == hb[name], "{name} differs between builds");
    }
    Ok(format!("{} artifacts byte-identical", ARTIFACTS.len()))
}

// ---------------------------------------------------------------- API

pub fn schema(name: &str) -> Value {
    let num_or_null = serde_json::json!({ "type": ["number", "null"] });
    let version = serde_json::json!({ "type": "integer", "minimum": 0 });
    let s = match name {
        "search" => serde_json::json!({
            "type": "object",
            "required": ["version", "query", "results"],
            "properties": {
                "version": version,
                "query": { "type": "string" },
                "results": { "type": "array", "items": {
                    "type": "object",
                    "required": ["id", "title", "authors", "venue", "published", "text_score", "network_rating", "final_score", "x", "y"],
                    "additionalProperties": false,
                    "properties": {
                        "id": { "type": "string" },
                        "title": { "type": "string" },
                        "authors": { "type": "array", "items": { "type": "string" } },
                        "venue": { "type": "string" },
                        "published": { "type": "string", "pattern": "^[0-9]{4}-[0-9]{2}-[0-9]{2}$" },
                        "text_score": { "type": "number", "minimum": 0 },
                        "network_rating": { "type": "number", "minimum": 0, "maximum": 1 },
                        "final_score": { "type": "number", "minimum": 0 },
                        "x": num_or_null, "y": num_or_null
                    }
                }}
            }
        }),
        "paper" => serde_json::json!({
            "type": "object",
            "required": ["version", "id", "title", "authors", "venue", "published", "abstract", "pagerank", "reverse_pagerank", "combined", "x", "y"],
            "properties": {
                "version": version,
                "id": { "type": "string" },
                "authors": { "type": "array", "items": { "type": "string" } },
                "pagerank": num_or_null, "reverse_pagerank": num_or_null, "combined": num_or_null,
                "x": num_or_null, "y": num_or_null
            }
        }),
        "related" => serde_json::json!({
            "type": "object",
            "required": ["version", "id", "related"],
            "properties": {
                "version": version,
                "related": { "type": "array", "items": {
                    "type": "object", "required": ["id", "weight"], "additionalProperties": false,
                    "properties": { "id": { "type": "string" }, "weight": { "type": "number", "exclusiveMinimum": 0, "maximum": 1 } }
                }}
            }
        }),
        "graph" => serde_json::json!({
            "type": "object",
            "required": ["version", "nodes", "edges"],
            "properties": {
                "version": version,
                "nodes": { "type": "array", "maxItems": 500, "items": {
                    "type": "object", "required": ["id", "x", "y", "combined", "venue"], "additionalProperties": false,
                    "properties": {
                        "id": { "type": "string" }, "x": num_or_null, "y": num_or_null,
                        "combined": num_or_null, "venue": { "type": ["string", "null"] }
                    }
                }},
                "edges": { "type": "array", "items": {
                    "type": "object", "required": ["s", "t", "w"], "additionalProperties": false,
                    "properties": { "s": { "type": "string" }, "t": { "type": "string" }, "w": { "type": "number" } }
                }}
            }
        }),
        "feedback" => serde_json::json!({
            "type": "object",
            "required": ["version", "seq"],
            "properties": { "version": version, "seq": { "type": "integer", "minimum": 1 } }
        }),
        "feed" => serde_json::json!({
            "type": "object",
            "required": ["version", "user", "items"],
            "properties": {
                "version": version,
                "items": { "type": "array", "items": {
                    "type": "object", "required": ["id", "reason", "score"], "additionalProperties": false,
                    "properties": {
                        "id": { "type": "string" },
                        "reason": { "enum": ["neighbor_of_library", "neighbor_of_starred", "global_top"] },
                        "score": { "type": "number" }
                    }
                }}
            }
        }),
        "error" => serde_json::json!({
            "type": "object", "required": ["error"],
            "properties": { "error": { "type": "string" } }
        }),
        other => panic!("no schema {other}"),
    };
    s
}

pub fn validate(name: &str, instance: &Value) -> Result<(), String> {
    let compiled = jsonschema::JSONSchema::compile(&schema(name)).map_err(|e| e.to_string())?;
    if let Err(errors) = compiled.validate(instance) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        return Err(format!("{name}: {}", msgs.join("; ")));
    }
    Ok(())
}

/// A running server over a built fixture; dropped with the runtime.
pub struct TestServer {
    pub base: String,
    pub state: Arc<AppState>,
    pub runtime: tokio::runtime::Runtime,
    pub _dir: tempfile::TempDir,
    pub data: std::path::PathBuf,
}

pub fn start_server() -> Result<TestServer, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = dir.path().join("in.jsonl");
    write_jsonl(&input, &reorder_fixture());
    let data = dir.path().join("data");
    let p = Pipeline::open(&data, EngineConfig::default()).map_err(|e| e.to_string())?;
    p.ingest(&input).map_err(|e| e.to_string())?;
    p.build(BuildTarget::All, false).map_err(|e| e.to_string())?;
    let snapshot = ApiSnapshot::load(&p).map_err(|e| e.to_string())?;
    let state = Arc::new(AppState::new(snapshot, p.store().clone()));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let app = server::router(state.clone());
    runtime.spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    Ok(TestServer { base: format!("http://{addr}"), state, runtime, _dir: dir, data })
}

pub struct Reply {
    pub status: u16,
    pub content_type: String,
    pub body: Value,
}

pub async fn fetch(req: reqwest::RequestBuilder) -> Reply {
    let resp = match req.send().await {
        Ok(r) => r,
        Err(e) => {
            return Reply {
                status: 0,
                content_type: String::new(),
                body: Value::String(e.to_string()),
            }
        }
    };
    let status = resp.status().as_u16();
    let content_type = resp
        .headers()
        .get("content-type")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let body = resp.json::<Value>().await.unwrap_or(Value::Null);
    Reply { status, content_type, body }
}

/// Every endpoint, success and error paths, against its schema.
pub fn api_schemas(srv: &TestServer) -> Result<usize, String> {
    let base = srv.base.clone();
    srv.runtime.block_on(async move {
        let c = reqwest::Client::new();
        let cases: Vec<(reqwest::RequestBuilder, u16, &str)> = vec![
            (c.get(format!("{base}/api/search?q=t-sne")), 200, "search"),
            (c.get(format!("{base}/api/search?q=t-sne&limit=3&ratings=false")), 200, "search"),
            (c.get(format!("{base}/api/search?q=zzzunknown")), 200, "search"),
            (c.get(format!("{base}/api/search")), 400, "error"),
            (c.get(format!("{base}/api/search?q=x&limit=0")), 400, "error"),
            (c.get(format!("{base}/api/papers/S")), 200, "paper"),
            (c.get(format!("{base}/api/papers/nope")), 404, "error"),
            (c.get(format!("{base}/api/papers/S/related?limit=4")), 200, "related"),
            (c.get(format!("{base}/api/papers/nope/related")), 404, "error"),
            (c.get(format!("{base}/api/graph?ids=S&hops=1")), 200, "graph"),
            (c.get(format!("{base}/api/graph?ids=D01,T&hops=2")), 200, "graph"),
            (c.get(format!("{base}/api/graph?ids=S&hops=3")), 400, "error"),
            (c.get(format!("{base}/api/graph?ids=ghost")), 404, "error"),
            (c.post(format!("{base}/api/feedback")).json(&serde_json::json!({"user": "u", "kind": "star", "doc_id": "D02"})), 202, "feedback"),
            (c.post(format!("{base}/api/feedback")).json(&serde_json::json!({"user": "u", "kind": "library_add", "doc_id": "D03"})), 202, "feedback"),
            (c.post(format!("{base}/api/feedback")).json(&serde_json::json!({"user": "u", "kind": "click", "doc_id": "S"})), 202, "feedback"),
            (c.post(format!("{base}/api/feedback")).json(&serde_json::json!({"user": "u", "kind": "like", "doc_id": "S"})), 400, "error"),
            (c.post(format!("{base}/api/feedback")).json(&serde_json::json!({"user": "u", "kind": "star", "doc_id": "ghost"})), 404, "error"),
            (c.post(format!("{base}/api/feedback")).body("not json"), 400, "error"),
            (c.get(format!("{base}/api/feed?user=u&limit=5")), 200, "feed"),
            (c.get(format!("{base}/api/feed?user=newcomer")), 200, "feed"),
        ];
        let total = cases.len();
        for (i, (req, status, name)) in cases.into_iter().enumerate() {
            let reply = fetch(req).await;
            ensure!(reply.status == status, "case {i} ({name}): status {} != {status}: {}", reply.status, reply.body);
            ensure!(reply.content_type == "application/json; charset=utf-8", "case {i}: content-type {}", reply.content_type);
            validate(name, &reply.body).map_err(|e| format!("case {i}: {e}"))?;
        }
        Ok(total)
    })
}

/// A second snapshot whose ratings and coordinates differ from `base` at
/// every document.
pub fn shifted_snapshot(base: &ApiSnapshot, version: u64) -> ApiSnapshot {
    let mut next = base.clone();
    next.version = version;
    for c in next.ranks.combined.values_mut() {
        *c = *c * *c;
    }
    for p in next.layout.coords.values_mut() {
        p.x += 1000.0;
    }
    next
}

fn consistent_with(snap: &ApiSnapshot, body: &Value) -> bool {
    body["results"].as_array().is_some_and(|results| {
        results.iter().all(|r| {
            let id = r["id"].as_str().unwrap_or_default();
            let near = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
                _ => false,
            };
            near(r["network_rating"].as_f64(), snap.ranks.combined.get(id).copied())
                && near(r["x"].as_f64(), snap.layout.get(id).map(|p| p.x))
        })
    })
}

pub fn snapshot_swap_atomicity(srv: &TestServer) -> Result<String, String> {
    let v1 = (*srv.state.current()).clone();
    let v1 = ApiSnapshot { version: 1, ..v1 };
    let v2 = shifted_snapshot(&v1, 2);
    srv.state.publish(v1.clone());
    let versions = Arc::new([v1, v2]);
    let base = srv.base.clone();
    let state = srv.state.clone();
    srv.runtime.block_on(async move {
        let stop = Arc::new(std::sync::atomic::AtomicBool::new(false));
        let swapper = {
            let stop = stop.clone();
            let versions = versions.clone();
            std::thread::spawn(move || {
                let mut i = 0usize;
                while !stop.load(std::sync::atomic::Ordering::Relaxed) {
                    state.publish(versions[i % 2].clone());
                    i += 1;
                    std::thread::sleep(std::time::Duration::from_micros(200));
                }
                i
            })
        };
        let client = reqwest::Client::new();
        let mut tasks = Vec::new();
        for _ in 0..100 {
            let client = client.clone();
            let url = format!("{base}/api/search?q=t-sne&limit=12");
            tasks.push(tokio::spawn(async move { fetch(client.get(url)).await }));
        }
        let mut seen = [0usize; 2];
        for t in tasks {
            let reply = t.await.map_err(|e| e.to_string())?;
            ensure!(reply.status == 200, "status {}", reply.status);
            let v = reply.body["version"].as_u64().unwrap_or(0);
            ensure!(v == 1 || v == 2, "unexpected version {v}");
            let snap = &versions[(v - 1) as usize];
            ensure!(consistent_with(snap, &reply.body), "response tagged v{v} carries data from the other snapshot");
            seen[(v - 1) as usize] += 1;
        }
        stop.store(true, std::sync::atomic::Ordering::Relaxed);
        let swaps = swapper.join().map_err(|_| "swapper panicked".to_string())?;
        Ok(format!("100 responses consistent (v1: {}, v2: {}) across {swaps} swaps", seen[0], seen[1]))
    })
}

pub fn api_contract() -> Outcome {
    let srv = start_server()?;
    let cases = api_schemas(&srv)?;
    let swap = snapshot_swap_atomicity(&srv)?;
    Ok(format!("{cases} endpoint cases schema-valid; {swap}"))
}

pub type Criterion = (&'static str, fn() -> Outcome);

pub const PRIMARY: [Criterion; 11] = [
    ("Cosine/TF-IDF oracle", tfidf_oracle),
    ("PageRank correctness", pagerank_oracle),
    ("Reverse PageRank identity", reverse_pagerank_identity),
    ("10-iteration adequacy", ten_iteration_adequacy),
    ("Graph build equivalence", graph_build_equivalence),
    ("Feedback rules", feedback_rules),
    ("Temporal orientation", temporal_orientation),
    ("t-SNE gradient check", tsne_gradient_check),
    ("Search reordering by network rating", table_reorder),
    ("Pipeline determinism", pipeline_determinism),
    ("API contract", api_contract),
];
