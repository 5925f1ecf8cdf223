//! Batch pipeline over a data directory.
//!
//! Stages and the files they read and write:
//!
//! ```text
//! lexicon  documents.jsonl                         -> lexicon.json
//! vectors  documents.jsonl lexicon.json
//!          [embeddings.jsonl]                      -> vectors_tfidf.jsonl vectors_dense.jsonl index.json
//! graph    vectors_* documents.jsonl
//!          feedback.jsonl impressions.jsonl        -> graph.json
//! rank     graph.json documents.jsonl              -> ranks.json
//! layout   vectors_dense.jsonl                     -> layout.json
//! ```
//!
//! `manifest.json` records the content hash of every input and output of each
//! stage. A stage only runs when its upstream artifacts exist and still match
//! the manifest (unless forced).

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, TryLockError};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::info;

use crate::config::EngineConfig;
use crate::corpus::{
    self, order_events, CorpusError, Document, PubDate, Store, DOCUMENTS_FILE, FEEDBACK_FILE,
    IMPRESSIONS_FILE,
};
use crate::layout::{tsne, Layout, LayoutError, LayoutRecord};
use crate::rank::{RankError, RankRecord, RankScores};
use crate::search::InvertedIndex;
use crate::simnet::{
    apply_feedback, build_graph, insert_paper, orient_temporal, GraphError, GraphFile,
    SimilarityGraph,
};
use crate::vectorize::{
    DenseRecord, EmbeddingProvider, PrecomputedEmbeddings, RandomProjection, SparseRecord,
    TermLexicon, Tokenizer, VectorError, VectorSet,
};

pub const LEXICON_FILE: &str = "lexicon.json";
pub const TFIDF_FILE: &str = "vectors_tfidf.jsonl";
pub const DENSE_FILE: &str = "vectors_dense.jsonl";
pub const INDEX_FILE: &str = "index.json";
pub const GRAPH_FILE: &str = "graph.json";
pub const RANKS_FILE: &str = "ranks.json";
pub const LAYOUT_FILE: &str = "layout.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".etymo.lock";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage `{stage}` needs {artifact}; run `build --stage {producer}` first")]
    MissingPrerequisite {
        stage: Stage,
        artifact: &'static str,
        producer: Stage,
    },
    #[error("stage `{stage}` input {artifact} is stale; rebuild `{producer}` or pass --force")]
    Stale {
        stage: Stage,
        artifact: &'static str,
        producer: Stage,
    },
    #[error("{artifact} has not been built; run `build --stage {producer}`")]
    NotBuilt {
        artifact: &'static str,
        producer: Stage,
    },
    #[error("data directory {0} is locked by another invocation")]
    Locked(PathBuf),
    #[error("malformed artifact {file}: {message}")]
    Artifact { file: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

impl PipelineError {
    /// Process exit code: 2 for usage and prerequisite problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::MissingPrerequisite { .. } | Self::Stale { .. } | Self::NotBuilt { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Lexicon,
    Vectors,
    Graph,
    Rank,
    Layout,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Lexicon, Stage::Vectors, Stage::Graph, Stage::Rank, Stage::Layout];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Lexicon => "lexicon",
            Stage::Vectors => "vectors",
            Stage::Graph => "graph",
            Stage::Rank => "rank",
            Stage::Layout => "layout",
        }
    }

    /// Artifacts produced by upstream stages that this stage reads.
    pub fn upstream(self) -> &'static [(&'static str, Stage)] {
        match self {
            Stage::Lexicon => &[],
            Stage::Vectors => &[(LEXICON_FILE, Stage::Lexicon)],
            Stage::Graph => &[(TFIDF_FILE, Stage::Vectors), (DENSE_FILE, Stage::Vectors)],
            Stage::Rank => &[(GRAPH_FILE, Stage::Graph)],
            Stage::Layout => &[(DENSE_FILE, Stage::Vectors)],
        }
    }

    /// Raw data files this stage reads.
    pub fn sources(self) -> &'static [&'static str] {
        match self {
            Stage::Lexicon => &[DOCUMENTS_FILE],
            Stage::Vectors => &[DOCUMENTS_FILE, EMBEDDINGS_FILE],
            Stage::Graph => &[DOCUMENTS_FILE, FEEDBACK_FILE, IMPRESSIONS_FILE],
            Stage::Rank => &[DOCUMENTS_FILE],
            Stage::Layout => &[],
        }
    }

    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Lexicon => &[LEXICON_FILE],
            Stage::Vectors => &[TFIDF_FILE, DENSE_FILE, INDEX_FILE],
            Stage::Graph => &[GRAPH_FILE],
            Stage::Rank => &[RANKS_FILE],
            Stage::Layout => &[LAYOUT_FILE],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// Which stages a `build` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildTarget {
    All,
    Only(Stage),
}

impl FromStr for BuildTarget {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "all" {
            Ok(Self::All)
        } else {
            s.parse().map(Self::Only)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub built_at: DateTime<Utc>,
    /// Hash of every file read; `None` for an optional input that was absent.
    pub inputs: BTreeMap<String, Option<String>>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildManifest {
    pub version: u64,
    pub built_at: DateTime<Utc>,
    pub config: EngineConfig,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl BuildManifest {
    fn empty(config: EngineConfig) -> Self {
        Self {
            version: 0,
            built_at: Utc::now(),
            config,
            stages: BTreeMap::new(),
        }
    }
}

/// SHA-256 of a file, hex encoded; `None` if it does not exist.
pub fn hash_file(path: &Path) -> Result<Option<String>> {
    match fs::read(path) {
        Ok(bytes) => Ok(Some(hex::encode(Sha256::digest(&bytes)))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

fn artifact_err(file: &Path, message: impl fmt::Display) -> PipelineError {
    PipelineError::Artifact {
        file: file.display().to_string(),
        message: message.to_string(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| artifact_err(path, e))?;
    bytes.push(b'\n');
    corpus::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut bytes = Vec::new();
    for r in records {
        serde_json::to_writer(&mut bytes, r).map_err(|e| artifact_err(path, e))?;
        bytes.push(b'\n');
    }
    corpus::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| artifact_err(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| artifact_err(path, e))?);
        }
    }
    Ok(out)
}

/// Exclusive advisory lock on a data directory, released on drop.
#[derive(Debug)]
pub struct DataDirLock {
    _file: File,
}

impl DataDirLock {
    pub fn acquire(data: &Path) -> Result<Self> {
        fs::create_dir_all(data).map_err(|source| PipelineError::Io {
            path: data.to_path_buf(),
            source,
        })?;
        let path = data.join(LOCK_FILE);
        let file = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|source| PipelineError::Io { path: path.clone(), source })?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file }),
            Err(TryLockError::WouldBlock) => Err(PipelineError::Locked(data.to_path_buf())),
            Err(TryLockError::Error(source)) => Err(PipelineError::Io { path, source }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildReport {
    pub version: u64,
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertReport {
    pub version: u64,
    /// `(new id, ids it was linked to)` in insertion order.
    pub inserted: Vec<(String, Vec<String>)>,
}

/// Orchestrates the stages over one data directory.
#[derive(Debug)]
pub struct Pipeline {
    data: PathBuf,
    config: EngineConfig,
    store: Arc<Store>,
    tokenizer: Tokenizer,
}

impl Pipeline {
    pub fn open(data: impl AsRef<Path>, config: EngineConfig) -> Result<Self> {
        let data = data.as_ref().to_path_buf();
        let store = Arc::new(Store::open(&data)?);
        Ok(Self {
            data,
            config,
            store,
            tokenizer: Tokenizer::default(),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    fn path(&self, name: &str) -> PathBuf {
        self.data.join(name)
    }

    pub fn ingest(&self, file: &Path) -> Result<usize> {
        Ok(self.store.ingest_documents(file)?)
    }

    pub fn manifest(&self) -> Result<Option<BuildManifest>> {
        let path = self.path(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    /// Checks that every upstream artifact of `stage` exists and, unless
    /// `force`, that it is the one recorded in the manifest and was itself
    /// built from current inputs.
    fn check_prerequisites(&self, stage: Stage, manifest: &BuildManifest, force: bool) -> Result<()> {
        for &(artifact, producer) in stage.upstream() {
            if !self.path(artifact).exists() {
                return Err(PipelineError::MissingPrerequisite { stage, artifact, producer });
            }
            if force {
                continue;
            }
            let stale = PipelineError::Stale { stage, artifact, producer };
            let Some(record) = manifest.stages.get(&producer) else {
                return Err(stale);
            };
            if record.outputs.get(artifact) != hash_file(&self.path(artifact))?.as_ref() {
                return Err(stale);
            }
            for (input, recorded) in &record.inputs {
                if hash_file(&self.path(input))? != *recorded {
                    return Err(stale);
                }
            }
            self.check_prerequisites(producer, manifest, false)
                .map_err(|_| PipelineError::Stale { stage, artifact, producer })?;
        }
        Ok(())
    }

    fn stamp(&self, stage: Stage, manifest: &mut BuildManifest) -> Result<()> {
        let mut inputs = BTreeMap::new();
        for &(artifact, _) in stage.upstream() {
            inputs.insert(artifact.to_string(), hash_file(&self.path(artifact))?);
        }
        for &source in stage.sources() {
            inputs.insert(source.to_string(), hash_file(&self.path(source))?);
        }
        let mut outputs = BTreeMap::new();
        for &out in stage.outputs() {
            let hash = hash_file(&self.path(out))?.expect("stage output was just written");
            outputs.insert(out.to_string(), hash);
        }
        manifest.stages.insert(
            stage,
            StageRecord {
                built_at: Utc::now(),
                inputs,
                outputs,
            },
        );
        Ok(())
    }

    /// Runs the requested stages in dependency order and updates the manifest.
    pub fn build(&self, target: BuildTarget, force: bool) -> Result<BuildReport> {
        let mut manifest = self
            .manifest()?
            .unwrap_or_else(|| BuildManifest::empty(self.config));
        let stages: Vec<Stage> = match target {
            BuildTarget::All => Stage::ALL.to_vec(),
            BuildTarget::Only(stage) => {
                self.check_prerequisites(stage, &manifest, force)?;
                vec![stage]
            }
        };
        for &stage in &stages {
            info!(%stage, "running stage");
            self.run_stage(stage)?;
            self.stamp(stage, &mut manifest)?;
        }
        manifest.version += 1;
        manifest.built_at = Utc::now();
        manifest.config = self.config;
        write_json(&self.path(MANIFEST_FILE), &manifest)?;
        Ok(BuildReport {
            version: manifest.version,
            stages,
        })
    }

    fn run_stage(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Lexicon => {
                let docs = self.store.documents();
                let lexicon = TermLexicon::build(docs.iter().map(|d| d.as_ref()), &self.tokenizer)?;
                write_json(&self.path(LEXICON_FILE), &lexicon.to_file())
            }
            Stage::Vectors => {
                let lexicon = self.load_lexicon()?;
                let provider = self.embedding_provider()?;
                let docs = self.store.documents();
                let vectors = VectorSet::compute(
                    docs.iter().map(|d| d.as_ref()),
                    &lexicon,
                    &self.tokenizer,
                    provider.as_ref(),
                )?;
                self.write_vectors(&vectors)
            }
            Stage::Graph => {
                let vectors = self.load_vectors()?;
                let graph = self.adaptive_graph(&vectors)?;
                write_json(&self.path(GRAPH_FILE), &graph.to_file(self.config.graph()))
            }
            Stage::Rank => {
                let graph = self.load_graph()?;
                let ranks = self.rank_graph(&graph)?;
                write_json(&self.path(RANKS_FILE), &ranks.to_records())
            }
            Stage::Layout => {
                let vectors = self.load_vectors_dense()?;
                let points: Vec<(String, Vec<f64>)> = vectors
                    .into_iter()
                    .map(|r| (r.id, r.components))
                    .collect();
                let run = tsne(&points, &self.config.layout())?;
                info!(initial_kl = run.initial_kl, final_kl = run.final_kl, "layout done");
                write_json(&self.path(LAYOUT_FILE), &run.layout.to_records())
            }
        }
    }

    /// Builds the similarity graph and reshapes it with the logged feedback,
    /// judging click rates against ranks of the unadapted graph.
    pub fn adaptive_graph(&self, vectors: &VectorSet) -> Result<SimilarityGraph> {
        let config = self.config.graph();
        let mut graph = build_graph(vectors, &config)?;
        let mut events = self.store.list_feedback(0);
        order_events(&mut events);
        let events: Vec<_> = events.into_iter().map(|e| e.event).collect();
        let impressions = self.store.impressions();
        if graph.node_count() > 0 && (!events.is_empty() || !impressions.is_empty()) {
            let preliminary = self.rank_graph(&graph)?;
            let report = apply_feedback(&mut graph, &events, &impressions, &preliminary, vectors, &config)?;
            info!(?report, "feedback applied");
        }
        Ok(graph)
    }

    pub fn dates(&self) -> BTreeMap<String, PubDate> {
        self.store
            .documents()
            .into_iter()
            .map(|d| (d.id.clone(), d.published))
            .collect()
    }

    /// Orients the undirected graph by date and ranks it.
    pub fn rank_graph(&self, graph: &SimilarityGraph) -> Result<RankScores> {
        let directed = orient_temporal(graph, &self.dates())?;
        Ok(RankScores::compute(&directed, self.config.rank())?)
    }

    fn embedding_provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let path = self.path(EMBEDDINGS_FILE);
        if path.exists() {
            let records: Vec<DenseRecord> = read_jsonl(&path)?;
            Ok(Box::new(PrecomputedEmbeddings::new(records)?))
        } else {
            Ok(Box::new(RandomProjection::new(self.config.dim, self.config.embedding_seed)))
        }
    }

    fn write_vectors(&self, vectors: &VectorSet) -> Result<()> {
        write_jsonl(&self.path(TFIDF_FILE), &vectors.sparse_records())?;
        write_jsonl(&self.path(DENSE_FILE), &vectors.dense_records())?;
        write_json(&self.path(INDEX_FILE), &InvertedIndex::build(&vectors.tfidf))
    }

    /// Path of a stage output, or `NotBuilt` if it does not exist yet.
    fn built(&self, artifact: &'static str) -> Result<PathBuf> {
        let path = self.path(artifact);
        if path.exists() {
            return Ok(path);
        }
        let producer = Stage::ALL
            .into_iter()
            .find(|s| s.outputs().contains(&artifact))
            .unwrap_or(Stage::Lexicon);
        Err(PipelineError::NotBuilt { artifact, producer })
    }

    pub fn load_lexicon(&self) -> Result<TermLexicon> {
        Ok(TermLexicon::from_file(read_json(&self.built(LEXICON_FILE)?)?))
    }

    fn load_vectors_dense(&self) -> Result<Vec<DenseRecord>> {
        read_jsonl(&self.built(DENSE_FILE)?)
    }

    pub fn load_vectors(&self) -> Result<VectorSet> {
        let sparse: Vec<SparseRecord> = read_jsonl(&self.built(TFIDF_FILE)?)?;
        Ok(VectorSet::from_records(sparse, self.load_vectors_dense()?))
    }

    pub fn load_graph(&self) -> Result<SimilarityGraph> {
        let file: GraphFile = read_json(&self.built(GRAPH_FILE)?)?;
        Ok(SimilarityGraph::from_file(&file)?)
    }

    pub fn load_ranks(&self) -> Result<RankScores> {
        let records: Vec<RankRecord> = read_json(&self.built(RANKS_FILE)?)?;
        Ok(RankScores::from_records(records, self.config.rank()))
    }

    pub fn load_layout(&self) -> Result<Layout> {
        let records: Vec<LayoutRecord> = read_json(&self.built(LAYOUT_FILE)?)?;
        Ok(Layout::from_records(records))
    }

    pub fn load_index(&self) -> Result<InvertedIndex> {
        read_json(&self.built(INDEX_FILE)?)
    }

    /// Adds new documents without a full rebuild: each is vectorized against
    /// the existing lexicon, linked against the top-`k` ranked nodes, and
    /// placed at the centroid of its neighbors. Ranks are refreshed after
    /// every insertion.
    pub fn insert(&self, file: &Path) -> Result<InsertReport> {
        let mut manifest = self.manifest()?.unwrap_or_else(|| BuildManifest::empty(self.config));
        for stage in Stage::ALL {
            for &out in stage.outputs() {
                if !self.path(out).exists() {
                    return Err(PipelineError::MissingPrerequisite {
                        stage: Stage::Graph,
                        artifact: out,
                        producer: stage,
                    });
                }
            }
        }
        let reader = BufReader::new(File::open(file).map_err(|source| PipelineError::Io {
            path: file.to_path_buf(),
            source,
        })?);
        let docs: Vec<Document> = corpus::parse_document_lines(reader, file)?;

        let lexicon = self.load_lexicon()?;
        let provider = self.embedding_provider()?;
        let mut vectors = self.load_vectors()?;
        let mut graph = self.load_graph()?;
        let mut ranks = self.load_ranks()?;
        let mut layout = self.load_layout()?;
        let mut index = self.load_index()?;
        let config = self.config.graph();

        // Vectorize everything before touching the store so a bad document
        // leaves no trace.
        let mut prepared = Vec::with_capacity(docs.len());
        for doc in &docs {
            if graph.contains(&doc.id) {
                return Err(GraphError::DuplicateNode(doc.id.clone()).into());
            }
            let tfidf = crate::vectorize::tfidf_vector(doc, &lexicon, &self.tokenizer)?;
            let dense = provider.embed(&doc.id, &tfidf)?;
            prepared.push((doc.id.clone(), tfidf, dense));
        }
        self.store.add_documents(docs)?;

        let mut inserted = Vec::new();
        for (id, tfidf, dense) in prepared {
            index.insert(&id, &tfidf);
            vectors.insert(id.clone(), tfidf, dense);
            let links = insert_paper(&mut graph, &ranks, &id, &vectors, &config)?;
            ranks = self.rank_graph(&graph)?;
            let neighbors = graph.neighbors(&id);
            layout.place_by_neighbors(&id, &neighbors);
            inserted.push((id, links));
        }

        self.write_vectors(&vectors)?;
        // keep the index incrementally maintained rather than rebuilt
        write_json(&self.path(INDEX_FILE), &index)?;
        write_json(&self.path(GRAPH_FILE), &graph.to_file(config))?;
        write_json(&self.path(RANKS_FILE), &ranks.to_records())?;
        write_json(&self.path(LAYOUT_FILE), &layout.to_records())?;
        for stage in Stage::ALL {
            self.stamp(stage, &mut manifest)?;
        }
        manifest.version += 1;
        manifest.built_at = Utc::now();
        write_json(&self.path(MANIFEST_FILE), &manifest)?;
        Ok(InsertReport {
            version: manifest.version,
            inserted,
        })
    }
}
