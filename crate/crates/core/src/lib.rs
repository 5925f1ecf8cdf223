//! Etymo: a literature search engine that ranks papers by their position in
//! a document-similarity network rather than by citation counts.
//!
//! The crate is organised as a pipeline:
//!
//! - [`corpus`] stores documents, the feedback log and impression counters.
//! - [`vectorize`] turns documents into TF-IDF and dense vectors.
//! - [`simnet`] links similar documents and adapts the links to feedback.
//! - [`rank`] scores the temporally oriented network with PageRank in both
//!   directions.
//! - [`layout`] places every document on a 2-D map with t-SNE.
//! - [`search`] answers queries and builds personalised feeds.
//! - [`pipeline`] builds and persists the artifacts; [`server`] serves them.

pub mod config;
pub mod corpus;
pub mod layout;
pub mod pipeline;
pub mod rank;
pub mod search;
pub mod server;
pub mod simnet;
pub mod vectorize;

pub use config::EngineConfig;
pub use corpus::{Document, FeedbackEvent, FeedbackKind, Impressions, PubDate, Store};
pub use layout::{Layout, LayoutConfig};
pub use pipeline::{BuildTarget, Pipeline, PipelineError, Stage};
pub use rank::{RankParams, RankScores};
pub use search::{SearchEngine, SearchResult};
pub use simnet::{GraphConfig, SimilarityGraph};
pub use vectorize::{SparseVector, TermLexicon, Tokenizer};
