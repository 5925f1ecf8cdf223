//! Document store, corpus ingestion and the append-only feedback log.
//!
//! A store is a single directory:
//!
//! ```text
//! <data>/documents.jsonl    one Document per line
//! <data>/feedback.jsonl     append-only FeedbackEvent log
//! <data>/impressions.jsonl  per-document impression / click counters
//! ```
//!
//! Writes go through one internal writer lock. Readers take a snapshot of the
//! in-memory state, so a read never observes a half-written record.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const FEEDBACK_FILE: &str = "feedback.jsonl";
pub const IMPRESSIONS_FILE: &str = "impressions.jsonl";

/// Reserved user under which social-media mentions are recorded as stars.
pub const SOCIAL_TWITTER_USER: &str = "social:twitter";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate document id `{0}` with differing content")]
    DuplicateId(String),
    #[error("schema error on line {line}: {message}")]
    SchemaError { line: usize, message: String },
    #[error("document `{0}` not found")]
    NotFound(String),
    #[error("invalid date `{0}`: expected YYYY-MM-DD")]
    InvalidDate(String),
    #[error("invalid feedback kind `{0}`")]
    InvalidKind(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Calendar publication date. Only full `YYYY-MM-DD` dates are accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PubDate(NaiveDate);

impl PubDate {
    pub fn new(date: NaiveDate) -> Self {
        Self(date)
    }

    pub fn ymd(year: i32, month: u32, day: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(year, month, day).map(Self)
    }

    pub fn date(&self) -> NaiveDate {
        self.0
    }

    pub fn year(&self) -> i32 {
        use chrono::Datelike;
        self.0.year()
    }
}

impl FromStr for PubDate {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        // chrono accepts e.g. "2017-1-5"; require the canonical zero-padded form.
        let bytes = s.as_bytes();
        let shaped = bytes.len() == 10
            && bytes[4] == b'-'
            && bytes[7] == b'-'
            && bytes
                .iter()
                .enumerate()
                .all(|(i, b)| i == 4 || i == 7 || b.is_ascii_digit());
        if !shaped {
            return Err(CorpusError::InvalidDate(s.to_string()));
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map(Self)
            .map_err(|_| CorpusError::InvalidDate(s.to_string()))
    }
}

impl fmt::Display for PubDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%d"))
    }
}

impl Serialize for PubDate {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PubDate {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// A corpus item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub authors: Vec<String>,
    pub venue: String,
    pub published: PubDate,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub body: String,
}

impl Document {
    /// Title, abstract and body joined; the text that gets vectorized.
    pub fn full_text(&self) -> String {
        format!("{}\n{}\n{}", self.title, self.abstract_text, self.body)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("field `id` must be nonempty".into());
        }
        if self.body.trim().is_empty() {
            return Err("field `body` must be nonempty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Star,
    Click,
    LibraryAdd,
}

impl FromStr for FeedbackKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "star" => Ok(Self::Star),
            "click" => Ok(Self::Click),
            "library_add" => Ok(Self::LibraryAdd),
            other => Err(CorpusError::InvalidKind(other.to_string())),
        }
    }
}

impl fmt::Display for FeedbackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Star => "star",
            Self::Click => "click",
            Self::LibraryAdd => "library_add",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackEvent {
    pub user: String,
    pub kind: FeedbackKind,
    pub doc_id: String,
    pub timestamp: DateTime<Utc>,
}

impl FeedbackEvent {
    pub fn new(user: impl Into<String>, kind: FeedbackKind, doc_id: impl Into<String>) -> Self {
        Self {
            user: user.into(),
            kind,
            doc_id: doc_id.into(),
            timestamp: Utc::now(),
        }
    }

    pub fn at(mut self, timestamp: DateTime<Utc>) -> Self {
        self.timestamp = timestamp;
        self
    }
}

/// A feedback event together with its position in the log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequencedEvent {
    pub seq: u64,
    pub event: FeedbackEvent,
}

/// Sorts events by `(timestamp, log position)`.
pub fn order_events(events: &mut [SequencedEvent]) {
    events.sort_by(|a, b| {
        a.event
            .timestamp
            .cmp(&b.event.timestamp)
            .then(a.seq.cmp(&b.seq))
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpressionCounts {
    pub impressions: u64,
    pub clicks: u64,
}

impl ImpressionCounts {
    pub fn click_rate(&self) -> Option<f64> {
        (self.impressions > 0).then(|| self.clicks as f64 / self.impressions as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpressionRecord {
    pub doc_id: String,
    pub impressions: u64,
    pub clicks: u64,
}

/// Per-document impression and click counters, keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Impressions(BTreeMap<String, ImpressionCounts>);

impl Impressions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, doc_id: &str) -> ImpressionCounts {
        self.0.get(doc_id).copied().unwrap_or(ImpressionCounts {
            impressions: 0,
            clicks: 0,
        })
    }

    pub fn record_impression(&mut self, doc_id: &str) {
        self.entry(doc_id).impressions += 1;
    }

    /// Counts a click against a listed result. Clicks never exceed impressions;
    /// a click on a document that was never listed is not counted.
    pub fn record_click(&mut self, doc_id: &str) -> bool {
        let entry = self.entry(doc_id);
        if entry.clicks < entry.impressions {
            entry.clicks += 1;
            true
        } else {
            false
        }
    }

    pub fn set(&mut self, doc_id: &str, counts: ImpressionCounts) {
        self.0.insert(doc_id.to_string(), counts);
    }

    fn entry(&mut self, doc_id: &str) -> &mut ImpressionCounts {
        self.0
            .entry(doc_id.to_string())
            .or_insert(ImpressionCounts {
                impressions: 0,
                clicks: 0,
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ImpressionCounts)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn records(&self) -> Vec<ImpressionRecord> {
        self.0
            .iter()
            .map(|(id, c)| ImpressionRecord {
                doc_id: id.clone(),
                impressions: c.impressions,
                clicks: c.clicks,
            })
            .collect()
    }

    pub fn from_records(records: impl IntoIterator<Item = ImpressionRecord>) -> Self {
        Self(
            records
                .into_iter()
                .map(|r| {
                    (
                        r.doc_id,
                        ImpressionCounts {
                            impressions: r.impressions,
                            clicks: r.clicks,
                        },
                    )
                })
                .collect(),
        )
    }
}

#[derive(Debug, Default)]
struct State {
    documents: BTreeMap<String, Arc<Document>>,
    // Documents in insertion order, mirroring documents.jsonl.
    order: Vec<String>,
    feedback: Vec<FeedbackEvent>,
    impressions: Impressions,
}

/// Persistent document store rooted at one directory.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    state: RwLock<State>,
    writer: Mutex<()>,
}

impl Store {
    /// Opens (creating if necessary) the store at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(io_err(&root))?;

        let mut state = State::default();
        let docs_path = root.join(DOCUMENTS_FILE);
        for (line, doc) in read_jsonl::<Document>(&docs_path)? {
            doc.validate()
                .map_err(|message| CorpusError::SchemaError { line, message })?;
            if state.documents.contains_key(&doc.id) {
                return Err(CorpusError::DuplicateId(doc.id));
            }
            state.order.push(doc.id.clone());
            state.documents.insert(doc.id.clone(), Arc::new(doc));
        }
        state.feedback = read_jsonl::<FeedbackEvent>(&root.join(FEEDBACK_FILE))?
            .into_iter()
            .map(|(_, e)| e)
            .collect();
        state.impressions =
            Impressions::from_records(read_jsonl(&root.join(IMPRESSIONS_FILE))?.into_iter().map(|(_, r)| r));

        Ok(Self {
            root,
            state: RwLock::new(state),
            writer: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Ingests a line-delimited JSON file of documents.
    ///
    /// The whole file is validated before anything is written, so a failing
    /// file leaves the store untouched. Returns the number of records
    /// persisted by this call; identical re-ingests persist nothing.
    pub fn ingest_documents(&self, path: impl AsRef<Path>) -> Result<usize> {
        let path = path.as_ref();
        let file = File::open(path).map_err(io_err(path))?;
        let docs = parse_document_lines(BufReader::new(file), path)?;
        self.add_documents(docs)
    }

    /// Adds already-parsed documents with the same semantics as
    /// [`Store::ingest_documents`].
    pub fn add_documents(&self, docs: Vec<Document>) -> Result<usize> {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        let fresh = {
            let state = self.state.read().expect("state lock poisoned");
            let mut seen: BTreeMap<&str, &Document> = BTreeMap::new();
            let mut fresh = Vec::new();
            for doc in &docs {
                let existing = state
                    .documents
                    .get(&doc.id)
                    .map(|d| d.as_ref())
                    .or_else(|| seen.get(doc.id.as_str()).copied());
                match existing {
                    Some(prev) if prev == doc => {}
                    Some(_) => return Err(CorpusError::DuplicateId(doc.id.clone())),
                    None => {
                        seen.insert(&doc.id, doc);
                        fresh.push(doc.clone());
                    }
                }
            }
            fresh
        };
        if fresh.is_empty() {
            return Ok(0);
        }

        let path = self.root.join(DOCUMENTS_FILE);
        let mut buf = Vec::new();
        for doc in &fresh {
            serde_json::to_writer(&mut buf, doc).expect("document serializes");
            buf.push(b'\n');
        }
        append_bytes(&path, &buf)?;

        let mut state = self.state.write().expect("state lock poisoned");
        for doc in &fresh {
            state.order.push(doc.id.clone());
            state.documents.insert(doc.id.clone(), Arc::new(doc.clone()));
        }
        Ok(fresh.len())
    }

    pub fn get_document(&self, id: &str) -> Result<Arc<Document>> {
        self.state
            .read()
            .expect("state lock poisoned")
            .documents
            .get(id)
            .cloned()
            .ok_or_else(|| CorpusError::NotFound(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.state
            .read()
            .expect("state lock poisoned")
            .documents
            .contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.state.read().expect("state lock poisoned").documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All documents sorted by id.
    pub fn documents(&self) -> Vec<Arc<Document>> {
        self.state
            .read()
            .expect("state lock poisoned")
            .documents
            .values()
            .cloned()
            .collect()
    }

    /// Appends one feedback event; returns its 1-based sequence number.
    pub fn append_feedback(&self, event: FeedbackEvent) -> Result<u64> {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        if !self.contains(&event.doc_id) {
            return Err(CorpusError::NotFound(event.doc_id));
        }
        let mut line = serde_json::to_vec(&event).expect("event serializes");
        line.push(b'\n');
        append_bytes(&self.root.join(FEEDBACK_FILE), &line)?;

        let mut state = self.state.write().expect("state lock poisoned");
        state.feedback.push(event);
        Ok(state.feedback.len() as u64)
    }

    /// Events with sequence number greater than `since`, in log order.
    pub fn list_feedback(&self, since: u64) -> Vec<SequencedEvent> {
        let state = self.state.read().expect("state lock poisoned");
        state
            .feedback
            .iter()
            .enumerate()
            .map(|(i, e)| SequencedEvent {
                seq: i as u64 + 1,
                event: e.clone(),
            })
            .filter(|e| e.seq > since)
            .collect()
    }

    pub fn impressions(&self) -> Impressions {
        self.state
            .read()
            .expect("state lock poisoned")
            .impressions
            .clone()
    }

    /// Applies `update` to the impression counters and persists the result.
    pub fn update_impressions<F>(&self, update: F) -> Result<()>
    where
        F: FnOnce(&mut Impressions),
    {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        let mut next = self.impressions();
        update(&mut next);
        let mut buf = Vec::new();
        for record in next.records() {
            serde_json::to_writer(&mut buf, &record).expect("record serializes");
            buf.push(b'\n');
        }
        write_atomic(&self.root.join(IMPRESSIONS_FILE), &buf)?;
        self.state.write().expect("state lock poisoned").impressions = next;
        Ok(())
    }
}

/// Parses JSONL document records, reporting 1-based line numbers on failure.
pub fn parse_document_lines(reader: impl BufRead, origin: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err(origin))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|e| CorpusError::SchemaError {
                line: line_no,
                message: e.to_string(),
            })?;
        doc.validate().map_err(|message| CorpusError::SchemaError {
            line: line_no,
            message,
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| CorpusError::SchemaError {
            line: idx + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        out.push((idx + 1, value));
    }
    Ok(out)
}

fn append_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    file.write_all(bytes).map_err(io_err(path))?;
    file.sync_data().map_err(io_err(path))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
        file.write_all(bytes).map_err(io_err(&tmp))?;
        file.sync_data().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}
