//! PageRank and Reverse PageRank by power iteration, and their blend into a
//! single importance rating.
//!
//! The transition matrix row-normalizes out-edge weights. Dangling nodes
//! spread their mass uniformly:
//!
//! ```text
//! x⁰ = 1/N
//! xᵏ⁺¹ = d · (Pᵀxᵏ + m(xᵏ)/N) + (1 − d)/N      m = mass on dangling nodes
//! ```
//!
//! Each step is a pull-based sparse matrix–vector product. Rows are summed in
//! a fixed order, so results are bit-reproducible regardless of threading.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simnet::SimilarityGraph;

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("cannot rank an empty graph")]
    EmptyGraph,
    #[error("ranking requires a directed graph")]
    Undirected,
    #[error("score vectors cover different ids")]
    IdMismatch,
    #[error("score vector has no positive entry")]
    NonPositiveMax,
    #[error("negative edge weight on {0} -> {1}")]
    NegativeWeight(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankParams {
    pub damping: f64,
    pub iterations: usize,
    pub beta: f64,
    /// Stop early once the L1 change between iterates drops below this.
    pub tolerance: Option<f64>,
}

impl Default for RankParams {
    fn default() -> Self {
        Self {
            damping: 0.85,
            iterations: 10,
            beta: 0.5,
            tolerance: None,
        }
    }
}

/// Weighted transition structure of a directed graph, stored by target so a
/// step can pull from predecessors.
#[derive(Debug, Clone)]
pub struct PowerIteration {
    ids: Vec<String>,
    // in_edges[t] = (source, P(source, t)), sorted by source index
    in_edges: Vec<Vec<(usize, f64)>>,
    dangling: Vec<usize>,
    damping: f64,
}

impl PowerIteration {
    pub fn new(graph: &SimilarityGraph, damping: f64) -> Result<Self, RankError> {
        if !graph.is_directed() {
            return Err(RankError::Undirected);
        }
        if graph.node_count() == 0 {
            return Err(RankError::EmptyGraph);
        }
        let ids: Vec<String> = graph.nodes().map(str::to_string).collect();
        let index: BTreeMap<&str, usize> =
            ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

        let n = ids.len();
        let mut out_weight = vec![0.0; n];
        let mut arcs = Vec::with_capacity(graph.edge_count());
        for ((s, t), w) in graph.edges() {
            if w < 0.0 {
                return Err(RankError::NegativeWeight(s.to_string(), t.to_string()));
            }
            let (si, ti) = (index[s], index[t]);
            out_weight[si] += w;
            arcs.push((si, ti, w));
        }
        let mut in_edges = vec![Vec::new(); n];
        for (si, ti, w) in arcs {
            if out_weight[si] > 0.0 && w > 0.0 {
                in_edges[ti].push((si, w / out_weight[si]));
            }
        }
        for row in &mut in_edges {
            row.sort_by_key(|e| e.0);
        }
        let dangling = (0..n).filter(|&i| out_weight[i] <= 0.0).collect();
        Ok(Self {
            ids,
            in_edges,
            dangling,
            damping,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn uniform(&self) -> Vec<f64> {
        vec![1.0 / self.ids.len() as f64; self.ids.len()]
    }

    /// One power-method step.
    pub fn step(&self, x: &[f64]) -> Vec<f64> {
        let n = self.ids.len() as f64;
        let dangling_mass: f64 = self.dangling.iter().map(|&i| x[i]).sum();
        let base = self.damping * dangling_mass / n + (1.0 - self.damping) / n;
        self.in_edges
            .par_iter()
            .map(|row| {
                let pulled: f64 = row.iter().map(|&(s, p)| p * x[s]).sum();
                self.damping * pulled + base
            })
            .collect()
    }

    /// Runs up to `iterations` steps from the uniform vector, calling
    /// `observe(k, xᵏ)` after each one.
    pub fn run_observed<F>(&self, iterations: usize, tolerance: Option<f64>, mut observe: F) -> Vec<f64>
    where
        F: FnMut(usize, &[f64]),
    {
        let mut x = self.uniform();
        for k in 1..=iterations {
            let next = self.step(&x);
            observe(k, &next);
            let residual: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
            x = next;
            if tolerance.is_some_and(|tol| residual < tol) {
                break;
            }
        }
        x
    }

    pub fn run(&self, iterations: usize, tolerance: Option<f64>) -> Vec<f64> {
        self.run_observed(iterations, tolerance, |_, _| {})
    }

    fn to_map(&self, x: Vec<f64>) -> BTreeMap<String, f64> {
        self.ids.iter().cloned().zip(x).collect()
    }
}

pub fn pagerank(
    graph: &SimilarityGraph,
    damping: f64,
    iterations: usize,
) -> Result<BTreeMap<String, f64>, RankError> {
    let it = PowerIteration::new(graph, damping)?;
    let x = it.run(iterations, None);
    Ok(it.to_map(x))
}

/// PageRank on the graph with every arc reversed.
pub fn reverse_pagerank(
    graph: &SimilarityGraph,
    damping: f64,
    iterations: usize,
) -> Result<BTreeMap<String, f64>, RankError> {
    if !graph.is_directed() {
        return Err(RankError::Undirected);
    }
    pagerank(&graph.reversed(), damping, iterations)
}

/// `beta · pr/max(pr) + (1 − beta) · rpr/max(rpr)`.
pub fn combined_rating(
    pr: &BTreeMap<String, f64>,
    rpr: &BTreeMap<String, f64>,
    beta: f64,
) -> Result<BTreeMap<String, f64>, RankError> {
    if pr.len() != rpr.len() || pr.keys().zip(rpr.keys()).any(|(a, b)| a != b) {
        return Err(RankError::IdMismatch);
    }
    let max_pr = pr.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_rpr = rpr.values().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max_pr > 0.0 && max_rpr > 0.0) {
        return Err(RankError::NonPositiveMax);
    }
    Ok(pr
        .iter()
        .zip(rpr.values())
        .map(|((id, p), r)| {
            (
                id.clone(),
                beta * (p / max_pr) + (1.0 - beta) * (r / max_rpr),
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankScores {
    pub pagerank: BTreeMap<String, f64>,
    pub reverse_pagerank: BTreeMap<String, f64>,
    pub combined: BTreeMap<String, f64>,
    pub params: RankParams,
}

impl RankScores {
    pub fn compute(graph: &SimilarityGraph, params: RankParams) -> Result<Self, RankError> {
        let forward = PowerIteration::new(graph, params.damping)?;
        let pr = forward.run(params.iterations, params.tolerance);
        let backward = PowerIteration::new(&graph.reversed(), params.damping)?;
        let rpr = backward.run(params.iterations, params.tolerance);
        let pagerank = forward.to_map(pr);
        let reverse_pagerank = backward.to_map(rpr);
        let combined = combined_rating(&pagerank, &reverse_pagerank, params.beta)?;
        Ok(Self {
            pagerank,
            reverse_pagerank,
            combined,
            params,
        })
    }

    pub fn combined(&self, id: &str) -> Option<f64> {
        self.combined.get(id).copied()
    }

    /// Ids sorted by combined rating descending, ties by id ascending.
    pub fn ordered(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.combined.iter().map(|(k, &c)| (k.as_str(), c)).collect();
        v.sort_by(|a, b| by_score_then_id(a.1, a.0, b.1, b.0));
        v
    }

    pub fn to_records(&self) -> Vec<RankRecord> {
        self.ordered()
            .into_iter()
            .map(|(id, combined)| RankRecord {
                id: id.to_string(),
                pagerank: self.pagerank[id],
                reverse_pagerank: self.reverse_pagerank[id],
                combined,
            })
            .collect()
    }

    pub fn from_records(records: Vec<RankRecord>, params: RankParams) -> Self {
        let mut scores = Self {
            pagerank: BTreeMap::new(),
            reverse_pagerank: BTreeMap::new(),
            combined: BTreeMap::new(),
            params,
        };
        for r in records {
            scores.pagerank.insert(r.id.clone(), r.pagerank);
            scores.reverse_pagerank.insert(r.id.clone(), r.reverse_pagerank);
            scores.combined.insert(r.id, r.combined);
        }
        scores
    }
}

/// Descending score, ascending id.
pub fn by_score_then_id(sa: f64, ida: &str, sb: f64, idb: &str) -> Ordering {
    sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then_with(|| ida.cmp(idb))
}

/// One entry of `ranks.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankRecord {
    pub id: String,
    pub pagerank: f64,
    pub reverse_pagerank: f64,
    pub combined: f64,
}
