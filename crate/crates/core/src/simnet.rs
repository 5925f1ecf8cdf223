//! The similarity network: all-pairs construction, incremental insertion of
//! new documents against the top-ranked subset, feedback adaptation, and
//! temporal orientation.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FeedbackEvent, FeedbackKind, Impressions, PubDate};
use crate::rank::{by_score_then_id, RankScores};
use crate::vectorize::{cosine_similarity, VectorError, VectorSet};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("tf-idf and dense vectors cover different document ids")]
    IdMismatch,
    #[error("node `{0}` is already in the graph")]
    DuplicateNode(String),
    #[error("node `{0}` not found")]
    NotFound(String),
    #[error("no publication date for `{0}`")]
    MissingDate(String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("operation requires an undirected graph")]
    Directed,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

/// Knobs for graph construction and feedback adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// Link threshold on blended similarity.
    pub alpha: f64,
    /// Weight of the TF-IDF cosine in the blend; the dense cosine gets `1 − mu`.
    pub mu: f64,
    /// Size of the top-ranked comparison set used by incremental insertion.
    pub k: usize,
    pub gamma_star: f64,
    pub delta_lib: f64,
    pub ctr_threshold: f64,
    pub top_r: usize,
    pub demote_factor: f64,
    pub prune_floor: f64,
    pub weight_cap: f64,
    /// Impressions needed before a click rate is judged.
    pub min_impressions: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            mu: 0.5,
            k: 100,
            gamma_star: 0.05,
            delta_lib: 0.05,
            ctr_threshold: 0.02,
            top_r: 10,
            demote_factor: 0.8,
            prune_floor: 0.05,
            weight_cap: 1.0,
            min_impressions: 20,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: &str| Err(GraphError::InvalidConfig(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return bad("mu must lie in [0, 1]");
        }
        if self.k == 0 || self.top_r == 0 {
            return bad("k and top_r must be positive");
        }
        if !(self.gamma_star >= 0.0 && self.delta_lib >= 0.0 && self.prune_floor >= 0.0) {
            return bad("gamma_star, delta_lib and prune_floor must be nonnegative");
        }
        if !(self.ctr_threshold > 0.0 && self.ctr_threshold < 1.0) {
            return bad("ctr_threshold must lie in (0, 1)");
        }
        if !(self.demote_factor > 0.0 && self.demote_factor < 1.0) {
            return bad("demote_factor must lie in (0, 1)");
        }
        if self.weight_cap <= 0.0 {
            return bad("weight_cap must be positive");
        }
        Ok(())
    }
}

/// Weighted document graph. Undirected edges are keyed `(a, b)` with `a < b`;
/// directed edges are keyed `(source, target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    nodes: BTreeSet<String>,
    edges: BTreeMap<(String, String), f64>,
    // undirected projection: node -> neighbors
    adjacency: BTreeMap<String, BTreeSet<String>>,
    directed: bool,
}

impl SimilarityGraph {
    pub fn undirected(nodes: impl IntoIterator<Item = String>) -> Self {
        Self::with_nodes(nodes, false)
    }

    pub fn directed(nodes: impl IntoIterator<Item = String>) -> Self {
        Self::with_nodes(nodes, true)
    }

    fn with_nodes(nodes: impl IntoIterator<Item = String>, directed: bool) -> Self {
        let nodes: BTreeSet<String> = nodes.into_iter().collect();
        let adjacency = nodes.iter().map(|n| (n.clone(), BTreeSet::new())).collect();
        Self {
            nodes,
            edges: BTreeMap::new(),
            adjacency,
            directed,
        }
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains(id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn add_node(&mut self, id: &str) -> Result<(), GraphError> {
        if !self.nodes.insert(id.to_string()) {
            return Err(GraphError::DuplicateNode(id.to_string()));
        }
        self.adjacency.insert(id.to_string(), BTreeSet::new());
        Ok(())
    }

    fn key(&self, a: &str, b: &str) -> (String, String) {
        if self.directed || a < b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        }
    }

    /// Inserts or overwrites an edge. Both endpoints must already be nodes.
    pub fn set_edge(&mut self, a: &str, b: &str, w: f64) -> Result<(), GraphError> {
        if a == b {
            return Err(GraphError::SelfLoop(a.to_string()));
        }
        for id in [a, b] {
            if !self.nodes.contains(id) {
                return Err(GraphError::NotFound(id.to_string()));
            }
        }
        let key = self.key(a, b);
        self.edges.insert(key, w);
        self.adjacency.get_mut(a).expect("node").insert(b.to_string());
        self.adjacency.get_mut(b).expect("node").insert(a.to_string());
        Ok(())
    }

    pub fn remove_edge(&mut self, a: &str, b: &str) -> Option<f64> {
        let removed = self.edges.remove(&self.key(a, b))?;
        let still_linked = self.directed && self.edges.contains_key(&(b.to_string(), a.to_string()));
        if !still_linked {
            if let Some(adj) = self.adjacency.get_mut(a) {
                adj.remove(b);
            }
            if let Some(adj) = self.adjacency.get_mut(b) {
                adj.remove(a);
            }
        }
        Some(removed)
    }

    /// Weight of edge `{a, b}` (undirected) or arc `a → b` (directed).
    pub fn weight(&self, a: &str, b: &str) -> Option<f64> {
        self.edges.get(&self.key(a, b)).copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = ((&str, &str), f64)> {
        self.edges.iter().map(|((a, b), &w)| ((a.as_str(), b.as_str()), w))
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.values().sum()
    }

    /// Neighbors ignoring direction, with the strongest connecting weight.
    pub fn neighbors(&self, id: &str) -> Vec<(&str, f64)> {
        let Some(adj) = self.adjacency.get(id) else {
            return Vec::new();
        };
        adj.iter()
            .map(|n| {
                let w = if self.directed {
                    let fwd = self.weight(id, n).unwrap_or(f64::NEG_INFINITY);
                    let back = self.weight(n, id).unwrap_or(f64::NEG_INFINITY);
                    fwd.max(back)
                } else {
                    self.weight(id, n).expect("adjacency mirrors edges")
                };
                (n.as_str(), w)
            })
            .collect()
    }

    pub fn degree(&self, id: &str) -> usize {
        self.adjacency.get(id).map_or(0, BTreeSet::len)
    }

    /// The same graph with every arc flipped.
    pub fn reversed(&self) -> Self {
        if !self.directed {
            return self.clone();
        }
        let mut out = Self::directed(self.nodes.iter().cloned());
        for ((s, t), w) in self.edges() {
            out.set_edge(t, s, w).expect("valid arc");
        }
        out
    }

    /// Drops edges with weight at or below `floor`; returns how many.
    pub fn prune(&mut self, floor: f64) -> usize {
        let doomed: Vec<(String, String)> = self
            .edges
            .iter()
            .filter(|(_, &w)| w <= floor)
            .map(|(k, _)| k.clone())
            .collect();
        for (a, b) in &doomed {
            self.remove_edge(a, b);
        }
        doomed.len()
    }

    pub fn to_file(&self, config: GraphConfig) -> GraphFile {
        GraphFile {
            directed: self.directed,
            config,
            nodes: self.nodes.iter().cloned().collect(),
            edges: self
                .edges
                .iter()
                .map(|((a, b), &w)| EdgeRecord {
                    a: a.clone(),
                    b: b.clone(),
                    w,
                })
                .collect(),
        }
    }

    pub fn from_file(file: &GraphFile) -> Result<Self, GraphError> {
        let mut g = Self::with_nodes(file.nodes.iter().cloned(), file.directed);
        for e in &file.edges {
            g.set_edge(&e.a, &e.b, e.w)?;
        }
        Ok(g)
    }
}

/// On-disk graph layout (`graph.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub directed: bool,
    pub config: GraphConfig,
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub a: String,
    pub b: String,
    pub w: f64,
}

/// `mu · cos(tfidf) + (1 − mu) · cos(dense)` for two documents.
pub fn blended_similarity(vectors: &VectorSet, a: &str, b: &str, mu: f64) -> Result<f64, GraphError> {
    let missing = |id: &str| GraphError::NotFound(id.to_string());
    let ta = vectors.tfidf.get(a).ok_or_else(|| missing(a))?;
    let tb = vectors.tfidf.get(b).ok_or_else(|| missing(b))?;
    let da = vectors.dense.get(a).ok_or_else(|| missing(a))?;
    let db = vectors.dense.get(b).ok_or_else(|| missing(b))?;
    let sparse = ta.cosine(tb)?;
    let dense = cosine_similarity(da.components(), db.components())?;
    Ok(mu * sparse + (1.0 - mu) * dense)
}

fn check_ids(vectors: &VectorSet) -> Result<(), GraphError> {
    if vectors.tfidf.len() != vectors.dense.len()
        || vectors.tfidf.keys().zip(vectors.dense.keys()).any(|(a, b)| a != b)
    {
        return Err(GraphError::IdMismatch);
    }
    Ok(())
}

/// Links every pair whose blended similarity exceeds `alpha`.
pub fn build_graph(vectors: &VectorSet, config: &GraphConfig) -> Result<SimilarityGraph, GraphError> {
    config.validate()?;
    check_ids(vectors)?;
    let ids: Vec<&str> = vectors.ids().collect();
    let rows: Vec<Vec<(usize, f64)>> = (0..ids.len())
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::new();
            for j in i + 1..ids.len() {
                let s = blended_similarity(vectors, ids[i], ids[j], config.mu)?;
                if s > config.alpha {
                    row.push((j, s.min(config.weight_cap)));
                }
            }
            Ok(row)
        })
        .collect::<Result<_, GraphError>>()?;

    let mut graph = SimilarityGraph::undirected(ids.iter().map(|s| s.to_string()));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, w) in row {
            graph.set_edge(ids[i], ids[j], w)?;
        }
    }
    Ok(graph)
}

/// The `k` existing nodes with the highest combined rating. Nodes without a
/// rating sort after all rated ones.
pub fn representative_subset<'g>(graph: &'g SimilarityGraph, ranks: &RankScores, k: usize) -> Vec<&'g str> {
    let mut nodes: Vec<(&str, f64)> = graph
        .nodes()
        .map(|id| (id, ranks.combined(id).unwrap_or(f64::NEG_INFINITY)))
        .collect();
    nodes.sort_by(|a, b| by_score_then_id(a.1, a.0, b.1, b.0));
    nodes.into_iter().take(k).map(|(id, _)| id).collect()
}

/// Adds `new_id` to an undirected graph, comparing it only against the `k`
/// top-rated existing nodes. `vectors` must hold the new document's vectors.
/// Returns the ids it was linked to.
pub fn insert_paper(
    graph: &mut SimilarityGraph,
    ranks: &RankScores,
    new_id: &str,
    vectors: &VectorSet,
    config: &GraphConfig,
) -> Result<Vec<String>, GraphError> {
    if graph.is_directed() {
        return Err(GraphError::Directed);
    }
    if graph.contains(new_id) {
        return Err(GraphError::DuplicateNode(new_id.to_string()));
    }
    if !vectors.tfidf.contains_key(new_id) || !vectors.dense.contains_key(new_id) {
        return Err(GraphError::NotFound(new_id.to_string()));
    }
    let candidates: Vec<String> = representative_subset(graph, ranks, config.k)
        .into_iter()
        .map(str::to_string)
        .collect();
    let mut links = Vec::new();
    for other in candidates {
        let s = blended_similarity(vectors, new_id, &other, config.mu)?;
        if s > config.alpha {
            links.push((other, s.min(config.weight_cap)));
        }
    }
    graph.add_node(new_id)?;
    for (other, w) in &links {
        graph.set_edge(new_id, other, *w)?;
    }
    Ok(links.into_iter().map(|(id, _)| id).collect())
}

/// What [`apply_feedback`] changed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeedbackReport {
    pub star_bumps: usize,
    pub star_edges_created: usize,
    pub library_bumps: usize,
    pub library_edges_created: usize,
    pub demoted_nodes: Vec<String>,
    pub pruned: usize,
}

/// Reshapes an undirected graph from user feedback. `events` must already be
/// in `(timestamp, log position)` order.
///
/// 1. Each star on `d` multiplies every edge at `d` by `1 + gamma_star`
///    (capped). After all stars, `d`'s link threshold drops to
///    `alpha · (1 − gamma_star · stars(d))`, floored at `alpha / 2`, and pairs
///    `(d, x)` whose blended similarity clears the lowered threshold but not
///    `alpha` are linked at that similarity.
/// 2. For each user, every pair in their library gains `delta_lib`; missing
///    edges are created at `delta_lib`.
/// 3. A node in the top `top_r` by combined rating with at least
///    `min_impressions` impressions and click rate below `ctr_threshold` has
///    every incident edge multiplied by `demote_factor`.
///
/// Edges at or below `prune_floor` are then removed. Click events only feed
/// rule 3 through the impression counters.
pub fn apply_feedback(
    graph: &mut SimilarityGraph,
    events: &[FeedbackEvent],
    impressions: &Impressions,
    ranks: &RankScores,
    vectors: &VectorSet,
    config: &GraphConfig,
) -> Result<FeedbackReport, GraphError> {
    if graph.is_directed() {
        return Err(GraphError::Directed);
    }
    config.validate()?;
    for e in events {
        if !graph.contains(&e.doc_id) {
            return Err(GraphError::NotFound(e.doc_id.clone()));
        }
    }
    let cap = config.weight_cap;
    let mut report = FeedbackReport::default();

    // Rule 1: stars.
    let mut stars: BTreeMap<&str, usize> = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind == FeedbackKind::Star) {
        *stars.entry(e.doc_id.as_str()).or_default() += 1;
        let incident: Vec<(String, f64)> = graph
            .neighbors(&e.doc_id)
            .into_iter()
            .map(|(n, w)| (n.to_string(), w))
            .collect();
        for (n, w) in incident {
            graph.set_edge(&e.doc_id, &n, (w * (1.0 + config.gamma_star)).min(cap))?;
            report.star_bumps += 1;
        }
    }
    let lowered = |d: &str| -> f64 {
        let count = stars.get(d).copied().unwrap_or(0) as f64;
        (config.alpha * (1.0 - config.gamma_star * count)).max(config.alpha / 2.0)
    };
    let all: Vec<String> = graph.nodes().map(str::to_string).collect();
    let mut created = Vec::new();
    for &d in stars.keys() {
        for x in &all {
            if x == d || graph.weight(d, x).is_some() {
                continue;
            }
            let threshold = if stars.contains_key(x.as_str()) {
                lowered(d).min(lowered(x))
            } else {
                lowered(d)
            };
            let s = blended_similarity(vectors, d, x, config.mu)?;
            if s > threshold && s <= config.alpha {
                created.push((d.to_string(), x.clone(), s.min(cap)));
            }
        }
    }
    for (d, x, s) in created {
        if graph.weight(&d, &x).is_none() {
            graph.set_edge(&d, &x, s)?;
            report.star_edges_created += 1;
        }
    }

    // Rule 2: libraries.
    let mut libraries: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind == FeedbackKind::LibraryAdd) {
        libraries.entry(e.user.as_str()).or_default().insert(e.doc_id.as_str());
    }
    for docs in libraries.values() {
        let docs: Vec<&str> = docs.iter().copied().collect();
        for (i, a) in docs.iter().enumerate() {
            for b in &docs[i + 1..] {
                match graph.weight(a, b) {
                    Some(w) => {
                        graph.set_edge(a, b, (w + config.delta_lib).min(cap))?;
                        report.library_bumps += 1;
                    }
                    None => {
                        graph.set_edge(a, b, config.delta_lib.min(cap))?;
                        report.library_edges_created += 1;
                    }
                }
            }
        }
    }

    // Rule 3: click-rate demotion of top-ranked nodes.
    let top: Vec<String> = representative_subset(graph, ranks, config.top_r)
        .into_iter()
        .map(str::to_string)
        .collect();
    for d in top {
        let counts = impressions.get(&d);
        if counts.impressions < config.min_impressions {
            continue;
        }
        if counts.click_rate().is_some_and(|ctr| ctr < config.ctr_threshold) {
            let incident: Vec<(String, f64)> = graph
                .neighbors(&d)
                .into_iter()
                .map(|(n, w)| (n.to_string(), w))
                .collect();
            for (n, w) in incident {
                graph.set_edge(&d, &n, w * config.demote_factor)?;
            }
            report.demoted_nodes.push(d);
        }
    }

    report.pruned = graph.prune(config.prune_floor);
    Ok(report)
}

/// Directs every edge from the newer document to the older one; equal dates
/// yield arcs both ways with the original weight.
pub fn orient_temporal(
    graph: &SimilarityGraph,
    dates: &BTreeMap<String, PubDate>,
) -> Result<SimilarityGraph, GraphError> {
    if graph.is_directed() {
        return Err(GraphError::Directed);
    }
    for id in graph.nodes() {
        if !dates.contains_key(id) {
            return Err(GraphError::MissingDate(id.to_string()));
        }
    }
    let mut out = SimilarityGraph::directed(graph.nodes().map(str::to_string));
    for ((a, b), w) in graph.edges() {
        match dates[a].cmp(&dates[b]) {
            std::cmp::Ordering::Greater => out.set_edge(a, b, w)?,
            std::cmp::Ordering::Less => out.set_edge(b, a, w)?,
            std::cmp::Ordering::Equal => {
                out.set_edge(a, b, w)?;
                out.set_edge(b, a, w)?;
            }
        }
    }
    Ok(out)
}
