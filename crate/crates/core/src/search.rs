//! Query-time scoring, related-paper lookup and the per-user feed.
//!
//! Text relevance is the cosine between the query's TF-IDF vector and each
//! document's, restricted to documents sharing at least one query term. With
//! network ratings on, the score is boosted multiplicatively:
//!
//! ```text
//! final = text · (1 + λ · combined)
//! ```
//!
//! so a document with no lexical match never surfaces on rating alone.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FeedbackEvent, FeedbackKind, Impressions};
use crate::rank::{by_score_then_id, RankScores};
use crate::simnet::SimilarityGraph;
use crate::vectorize::{SparseVector, TermLexicon, Tokenizer};

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("document `{0}` not found")]
    NotFound(String),
}

/// Inverted index: term id to `(doc id, normalized tf-idf weight)` postings
/// sorted by doc id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InvertedIndex {
    postings: BTreeMap<u32, Vec<(String, f64)>>,
}

impl InvertedIndex {
    pub fn build(vectors: &BTreeMap<String, SparseVector>) -> Self {
        let mut postings: BTreeMap<u32, Vec<(String, f64)>> = BTreeMap::new();
        // BTreeMap iteration keeps each posting list sorted by doc id.
        for (id, v) in vectors {
            for &(term, w) in v.entries() {
                postings.entry(term).or_default().push((id.clone(), w));
            }
        }
        Self { postings }
    }

    pub fn postings(&self, term_id: u32) -> &[(String, f64)] {
        self.postings.get(&term_id).map_or(&[], Vec::as_slice)
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    /// Adds a document's postings, keeping lists sorted.
    pub fn insert(&mut self, id: &str, vector: &SparseVector) {
        for &(term, w) in vector.entries() {
            let list = self.postings.entry(term).or_default();
            let at = list.partition_point(|(d, _)| d.as_str() < id);
            list.insert(at, (id.to_string(), w));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub doc_id: String,
    pub text_score: f64,
    pub network_rating: f64,
    pub final_score: f64,
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Strength of the network-rating boost.
    pub lambda: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

/// Query engine over one set of artifacts.
#[derive(Debug, Clone, Copy)]
pub struct SearchEngine<'a> {
    pub lexicon: &'a TermLexicon,
    pub index: &'a InvertedIndex,
    pub tokenizer: &'a Tokenizer,
    /// Only consulted when network ratings are requested.
    pub ranks: Option<&'a RankScores>,
    pub config: SearchConfig,
}

impl<'a> SearchEngine<'a> {
    pub fn query_vector(&self, query: &str) -> Option<SparseVector> {
        self.lexicon.weigh_tokens(&self.tokenizer.tokenize(query))
    }

    /// Cosine text scores of every document sharing a query term.
    pub fn text_scores(&self, query: &str) -> BTreeMap<&'a str, f64> {
        let mut scores: BTreeMap<&'a str, f64> = BTreeMap::new();
        let Some(q) = self.query_vector(query) else {
            return scores;
        };
        for &(term, qw) in q.entries() {
            for (doc, dw) in self.index.postings(term) {
                *scores.entry(doc.as_str()).or_default() += qw * dw;
            }
        }
        scores
    }

    pub fn search(&self, query: &str, limit: usize, use_network_ratings: bool) -> Vec<SearchResult> {
        let mut results: Vec<SearchResult> = self
            .text_scores(query)
            .into_iter()
            .map(|(doc, text)| {
                let rating = self.ranks.and_then(|r| r.combined(doc)).unwrap_or(0.0);
                let final_score = if use_network_ratings {
                    text * (1.0 + self.config.lambda * rating)
                } else {
                    text
                };
                SearchResult {
                    doc_id: doc.to_string(),
                    text_score: text,
                    network_rating: rating,
                    final_score,
                    position: 0,
                }
            })
            .collect();
        results.sort_by(|a, b| by_score_then_id(a.final_score, &a.doc_id, b.final_score, &b.doc_id));
        results.truncate(limit);
        for (i, r) in results.iter_mut().enumerate() {
            r.position = i + 1;
        }
        results
    }
}

/// Graph neighbors of `doc_id`, ignoring direction, strongest first.
pub fn related(graph: &SimilarityGraph, doc_id: &str, limit: usize) -> Result<Vec<(String, f64)>, SearchError> {
    if !graph.contains(doc_id) {
        return Err(SearchError::NotFound(doc_id.to_string()));
    }
    let mut out: Vec<(String, f64)> = graph
        .neighbors(doc_id)
        .into_iter()
        .map(|(n, w)| (n.to_string(), w))
        .collect();
    out.sort_by(|a, b| by_score_then_id(a.1, &a.0, b.1, &b.0));
    out.truncate(limit);
    Ok(out)
}

/// Counts one impression for every result shown within the top `top_r`.
pub fn record_impressions(results: &[SearchResult], top_r: usize, impressions: &mut Impressions) {
    for r in results.iter().filter(|r| r.position <= top_r) {
        impressions.record_impression(&r.doc_id);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedReason {
    NeighborOfLibrary,
    NeighborOfStarred,
    GlobalTop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedItem {
    pub doc_id: String,
    pub reason: FeedReason,
    pub score: f64,
}

/// What one user has interacted with.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UserHistory {
    pub starred: BTreeSet<String>,
    pub library: BTreeSet<String>,
    pub clicked: BTreeSet<String>,
}

impl UserHistory {
    pub fn from_events<'e>(user: &str, events: impl IntoIterator<Item = &'e FeedbackEvent>) -> Self {
        let mut h = Self::default();
        for e in events.into_iter().filter(|e| e.user == user) {
            let set = match e.kind {
                FeedbackKind::Star => &mut h.starred,
                FeedbackKind::LibraryAdd => &mut h.library,
                FeedbackKind::Click => &mut h.clicked,
            };
            set.insert(e.doc_id.clone());
        }
        h
    }

    pub fn has_interacted(&self, id: &str) -> bool {
        self.starred.contains(id) || self.library.contains(id) || self.clicked.contains(id)
    }
}

/// Recommendations for one user.
///
/// Candidates are 1-hop neighbors of the user's starred and library papers,
/// scored `edge weight · combined rating` (best seed wins; library beats
/// starred on a tie). Short feeds are padded with the globally top-rated
/// papers, scored by their rating and listed after the neighbors. Papers the
/// user has already touched never appear.
pub fn feed(graph: &SimilarityGraph, ranks: &RankScores, history: &UserHistory, limit: usize) -> Vec<FeedItem> {
    let mut best: BTreeMap<&str, (f64, FeedReason)> = BTreeMap::new();
    let seeds = history
        .library
        .iter()
        .map(|s| (s, FeedReason::NeighborOfLibrary))
        .chain(history.starred.iter().map(|s| (s, FeedReason::NeighborOfStarred)));
    for (seed, reason) in seeds {
        for (n, w) in graph.neighbors(seed) {
            if history.has_interacted(n) {
                continue;
            }
            let score = w * ranks.combined(n).unwrap_or(0.0);
            match best.get(n) {
                Some(&(s, _)) if s >= score => {}
                _ => {
                    best.insert(n, (score, reason));
                }
            }
        }
    }
    let mut items: Vec<FeedItem> = best
        .into_iter()
        .map(|(id, (score, reason))| FeedItem {
            doc_id: id.to_string(),
            reason,
            score,
        })
        .collect();
    items.sort_by(|a, b| by_score_then_id(a.score, &a.doc_id, b.score, &b.doc_id));
    items.truncate(limit);

    if items.len() < limit {
        let taken: BTreeSet<String> = items.iter().map(|i| i.doc_id.clone()).collect();
        let padding: Vec<FeedItem> = ranks
            .ordered()
            .into_iter()
            .filter(|(id, _)| !history.has_interacted(id) && !taken.contains(*id))
            .take(limit - items.len())
            .map(|(id, c)| FeedItem {
                doc_id: id.to_string(),
                reason: FeedReason::GlobalTop,
                score: c,
            })
            .collect();
        items.extend(padding);
    }
    items
}
