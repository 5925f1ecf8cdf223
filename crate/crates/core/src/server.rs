//! HTTP/JSON API over an immutable artifact snapshot.
//!
//! Every handler loads the current snapshot once and answers from it alone,
//! so a rebuild swapping in version `v + 1` mid-flight can never produce a
//! response mixing two versions. Each body carries the `version` it was
//! served from. Feedback is only logged here; it reshapes the graph at the
//! next rebuild, hence `202 Accepted`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{Any, CorsLayer};
use tracing::{error, info};

use crate::config::EngineConfig;
use crate::corpus::{Document, FeedbackEvent, FeedbackKind, Store};
use crate::layout::Layout;
use crate::pipeline::{hash_file, Pipeline, PipelineError, MANIFEST_FILE};
use crate::rank::RankScores;
use crate::search::{self, InvertedIndex, SearchEngine, UserHistory};
use crate::simnet::{orient_temporal, SimilarityGraph};
use crate::vectorize::{TermLexicon, Tokenizer};

/// Largest subgraph `/api/graph` will return.
pub const MAX_GRAPH_NODES: usize = 500;
pub const DEFAULT_LIMIT: usize = 10;
pub const MAX_LIMIT: usize = 1000;

/// All artifacts of one build, frozen.
#[derive(Debug, Clone)]
pub struct ApiSnapshot {
    pub version: u64,
    pub built_at: DateTime<Utc>,
    pub documents: BTreeMap<String, Arc<Document>>,
    pub lexicon: TermLexicon,
    pub index: InvertedIndex,
    pub graph: SimilarityGraph,
    pub directed: SimilarityGraph,
    pub ranks: RankScores,
    pub layout: Layout,
    pub config: EngineConfig,
    pub tokenizer: Tokenizer,
}

impl ApiSnapshot {
    /// Loads the artifacts currently on disk.
    pub fn load(pipeline: &Pipeline) -> Result<Self, PipelineError> {
        let manifest = pipeline.manifest()?;
        let graph = pipeline.load_graph()?;
        let directed = orient_temporal(&graph, &pipeline.dates())?;
        Ok(Self {
            version: manifest.as_ref().map_or(0, |m| m.version),
            built_at: manifest.map_or_else(Utc::now, |m| m.built_at),
            documents: pipeline
                .store()
                .documents()
                .into_iter()
                .map(|d| (d.id.clone(), d))
                .collect(),
            lexicon: pipeline.load_lexicon()?,
            index: pipeline.load_index()?,
            graph,
            directed,
            ranks: pipeline.load_ranks()?,
            layout: pipeline.load_layout()?,
            config: *pipeline.config(),
            tokenizer: Tokenizer::default(),
        })
    }

    pub fn engine(&self) -> SearchEngine<'_> {
        SearchEngine {
            lexicon: &self.lexicon,
            index: &self.index,
            tokenizer: &self.tokenizer,
            ranks: Some(&self.ranks),
            config: self.config.search(),
        }
    }

    fn coords(&self, id: &str) -> (Option<f64>, Option<f64>) {
        self.layout.get(id).map_or((None, None), |p| (Some(p.x), Some(p.y)))
    }
}

/// Shared server state: the published snapshot and the live corpus writer.
#[derive(Debug)]
pub struct AppState {
    snapshot: RwLock<Arc<ApiSnapshot>>,
    store: Arc<Store>,
}

impl AppState {
    pub fn new(snapshot: ApiSnapshot, store: Arc<Store>) -> Self {
        Self {
            snapshot: RwLock::new(Arc::new(snapshot)),
            store,
        }
    }

    pub fn current(&self) -> Arc<ApiSnapshot> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    /// Replaces the published snapshot in one reference swap.
    pub fn publish(&self, snapshot: ApiSnapshot) {
        *self.snapshot.write().expect("snapshot lock poisoned") = Arc::new(snapshot);
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }
}

type Shared = Arc<AppState>;

fn json_response(status: StatusCode, body: &Value) -> Response {
    let bytes = serde_json::to_vec(body).expect("json value serializes");
    (
        status,
        [(
            header::CONTENT_TYPE,
            HeaderValue::from_static("application/json; charset=utf-8"),
        )],
        bytes,
    )
        .into_response()
}

fn ok(body: Value) -> Response {
    json_response(StatusCode::OK, &body)
}

fn fail(status: StatusCode, message: impl Into<String>) -> Response {
    json_response(status, &json!({ "error": message.into() }))
}

fn parse_limit(params: &HashMap<String, String>) -> Result<usize, Response> {
    match params.get("limit") {
        None => Ok(DEFAULT_LIMIT),
        Some(raw) => match raw.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n.min(MAX_LIMIT)),
            _ => Err(fail(StatusCode::BAD_REQUEST, "limit must be a positive integer")),
        },
    }
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw {
        "1" | "true" | "on" | "yes" => Some(true),
        "0" | "false" | "off" | "no" => Some(false),
        _ => None,
    }
}

pub fn router(state: Shared) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api/search", get(search_handler))
        .route("/api/papers/:id", get(paper_handler))
        .route("/api/papers/:id/related", get(related_handler))
        .route("/api/graph", get(graph_handler))
        .route("/api/feedback", post(feedback_handler))
        .route("/api/feed", get(feed_handler))
        .layer(cors)
        .with_state(state)
}

async fn search_handler(State(state): State<Shared>, Query(params): Query<HashMap<String, String>>) -> Response {
    let Some(query) = params.get("q") else {
        return fail(StatusCode::BAD_REQUEST, "missing query parameter `q`");
    };
    let limit = match parse_limit(&params) {
        Ok(l) => l,
        Err(resp) => return resp,
    };
    let ratings = match params.get("ratings").map(|r| parse_bool(r)) {
        None => true,
        Some(Some(b)) => b,
        Some(None) => return fail(StatusCode::BAD_REQUEST, "ratings must be true or false"),
    };
    let snap = state.current();
    let hits = snap.engine().search(query, limit, ratings);

    let top_r = snap.config.top_r;
    if hits.iter().any(|h| h.position <= top_r) {
        if let Err(e) = state
            .store
            .update_impressions(|imp| search::record_impressions(&hits, top_r, imp))
        {
            error!(%e, "failed to record impressions");
        }
    }

    let results: Vec<Value> = hits
        .iter()
        .map(|h| {
            let doc = &snap.documents[&h.doc_id];
            let (x, y) = snap.coords(&h.doc_id);
            json!({
                "id": h.doc_id,
                "title": doc.title,
                "authors": doc.authors,
                "venue": doc.venue,
                "published": doc.published.to_string(),
                "text_score": h.text_score,
                "network_rating": h.network_rating,
                "final_score": h.final_score,
                "x": x,
                "y": y,
            })
        })
        .collect();
    ok(json!({ "version": snap.version, "query": query, "results": results }))
}

async fn paper_handler(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    let snap = state.current();
    let Some(doc) = snap.documents.get(&id) else {
        return fail(StatusCode::NOT_FOUND, format!("unknown paper `{id}`"));
    };
    let (x, y) = snap.coords(&id);
    ok(json!({
        "version": snap.version,
        "id": doc.id,
        "title": doc.title,
        "authors": doc.authors,
        "venue": doc.venue,
        "published": doc.published.to_string(),
        "abstract": doc.abstract_text,
        "pagerank": snap.ranks.pagerank.get(&id),
        "reverse_pagerank": snap.ranks.reverse_pagerank.get(&id),
        "combined": snap.ranks.combined(&id),
        "x": x,
        "y": y,
    }))
}

async fn related_handler(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> Response {
    let limit = match parse_limit(&params) {
        Ok(l) => l,
        Err(resp) => return resp,
    };
    let snap = state.current();
    match search::related(&snap.graph, &id, limit) {
        Ok(list) => {
            let related: Vec<Value> = list
                .into_iter()
                .map(|(n, w)| json!({ "id": n, "weight": w }))
                .collect();
            ok(json!({ "version": snap.version, "id": id, "related": related }))
        }
        Err(_) => fail(StatusCode::NOT_FOUND, format!("unknown paper `{id}`")),
    }
}

/// Node set reached from `seeds` within `hops` rings, ignoring direction.
pub fn expand_rings(graph: &SimilarityGraph, seeds: &[String], hops: usize) -> BTreeSet<String> {
    let mut seen: BTreeSet<String> = seeds.iter().cloned().collect();
    let mut frontier: Vec<String> = seeds.to_vec();
    for _ in 0..hops {
        let mut next = Vec::new();
        for node in &frontier {
            for (n, _) in graph.neighbors(node) {
                if seen.insert(n.to_string()) {
                    next.push(n.to_string());
                }
            }
        }
        frontier = next;
    }
    seen
}

async fn graph_handler(State(state): State<Shared>, Query(params): Query<HashMap<String, String>>) -> Response {
    let Some(raw_ids) = params.get("ids") else {
        return fail(StatusCode::BAD_REQUEST, "missing query parameter `ids`");
    };
    let hops = match params.get("hops").map(|h| h.parse::<usize>()) {
        None => 1,
        Some(Ok(h)) if h <= 2 => h,
        _ => return fail(StatusCode::BAD_REQUEST, "hops must be 0, 1 or 2"),
    };
    let snap = state.current();
    let seeds: Vec<String> = raw_ids
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    if let Some(missing) = seeds.iter().find(|s| !snap.graph.contains(s)) {
        return fail(StatusCode::NOT_FOUND, format!("unknown paper `{missing}`"));
    }
    let nodes = expand_rings(&snap.graph, &seeds, hops);
    if nodes.len() > MAX_GRAPH_NODES {
        return fail(StatusCode::PAYLOAD_TOO_LARGE, "subgraph too large");
    }
    let node_json: Vec<Value> = nodes
        .iter()
        .map(|id| {
            let (x, y) = snap.coords(id);
            json!({
                "id": id,
                "x": x,
                "y": y,
                "combined": snap.ranks.combined(id),
                "venue": snap.documents.get(id).map(|d| d.venue.as_str()),
            })
        })
        .collect();
    let edges: Vec<Value> = snap
        .directed
        .edges()
        .filter(|((s, t), _)| nodes.contains(*s) && nodes.contains(*t))
        .map(|((s, t), w)| json!({ "s": s, "t": t, "w": w }))
        .collect();
    ok(json!({ "version": snap.version, "nodes": node_json, "edges": edges }))
}

#[derive(Debug, Deserialize)]
struct FeedbackBody {
    user: String,
    kind: String,
    doc_id: String,
}

async fn feedback_handler(State(state): State<Shared>, body: Bytes) -> Response {
    let body: FeedbackBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return fail(StatusCode::BAD_REQUEST, format!("invalid body: {e}")),
    };
    let kind: FeedbackKind = match body.kind.parse() {
        Ok(k) => k,
        Err(e) => return fail(StatusCode::BAD_REQUEST, e.to_string()),
    };
    if body.user.is_empty() {
        return fail(StatusCode::BAD_REQUEST, "user must be nonempty");
    }
    let store = state.store.clone();
    let event = FeedbackEvent::new(body.user, kind, body.doc_id.clone());
    let appended = tokio::task::spawn_blocking(move || {
        let seq = store.append_feedback(event)?;
        if kind == FeedbackKind::Click {
            store.update_impressions(|imp| {
                imp.record_click(&body.doc_id);
            })?;
        }
        Ok::<_, crate::corpus::CorpusError>(seq)
    })
    .await
    .expect("feedback task panicked");
    match appended {
        Ok(seq) => json_response(
            StatusCode::ACCEPTED,
            &json!({ "version": state.current().version, "seq": seq }),
        ),
        Err(crate::corpus::CorpusError::NotFound(id)) => {
            fail(StatusCode::NOT_FOUND, format!("unknown paper `{id}`"))
        }
        Err(e) => fail(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn feed_handler(State(state): State<Shared>, Query(params): Query<HashMap<String, String>>) -> Response {
    let limit = match parse_limit(&params) {
        Ok(l) => l,
        Err(resp) => return resp,
    };
    let user = params.get("user").cloned().unwrap_or_default();
    let snap = state.current();
    let events = state.store.list_feedback(0);
    let history = UserHistory::from_events(&user, events.iter().map(|e| &e.event));
    let items: Vec<Value> = search::feed(&snap.graph, &snap.ranks, &history, limit)
        .into_iter()
        .map(|i| json!({ "id": i.doc_id, "reason": i.reason, "score": i.score }))
        .collect();
    ok(json!({ "version": snap.version, "user": user, "items": items }))
}

/// How the server picks up rebuilt artifacts.
#[derive(Debug, Clone)]
pub struct ReloadPolicy {
    pub data: PathBuf,
    pub config: EngineConfig,
    pub interval: Duration,
}

/// Polls the manifest and publishes a fresh snapshot whenever it changes.
pub async fn watch_for_rebuilds(state: Shared, policy: ReloadPolicy) {
    let manifest = policy.data.join(MANIFEST_FILE);
    let mut last = hash_file(&manifest).ok().flatten();
    let mut ticker = tokio::time::interval(policy.interval);
    loop {
        ticker.tick().await;
        let current = hash_file(&manifest).ok().flatten();
        if current == last {
            continue;
        }
        let data = policy.data.clone();
        let config = policy.config;
        let loaded = tokio::task::spawn_blocking(move || {
            let pipeline = Pipeline::open(&data, config)?;
            ApiSnapshot::load(&pipeline)
        })
        .await
        .expect("reload task panicked");
        match loaded {
            Ok(snapshot) => {
                info!(version = snapshot.version, "publishing rebuilt snapshot");
                state.publish(snapshot);
                last = current;
            }
            Err(e) => error!(%e, "rebuild reload failed; keeping current snapshot"),
        }
    }
}

#[derive(Debug, Serialize)]
struct Banner<'a> {
    addr: &'a SocketAddr,
    version: u64,
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: Shared, reload: Option<ReloadPolicy>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    info!(banner = ?Banner { addr: &bound, version: state.current().version }, "listening");
    if let Some(policy) = reload {
        tokio::spawn(watch_for_rebuilds(state.clone(), policy));
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
