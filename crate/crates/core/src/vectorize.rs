//! Tokenization, the global term lexicon, TF-IDF vectors, dense embeddings
//! and cosine similarity.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

#[derive(Debug, Error, PartialEq)]
pub enum VectorError {
    #[error("cannot build a lexicon from an empty corpus")]
    EmptyCorpus,
    #[error("document `{0}` has no in-lexicon tokens")]
    EmptyVector(String),
    #[error("cosine similarity of a zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no embedding supplied for document `{0}`")]
    MissingEmbedding(String),
    #[error("embedding for `{0}` contains a non-finite component")]
    NonFinite(String),
}

/// Common English function words dropped by the default tokenizer.
pub const DEFAULT_STOPWORDS: [&str; 30] = [
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "have", "in", "is",
    "it", "its", "of", "on", "or", "that", "the", "this", "to", "was", "we", "were", "which",
    "will", "with", "using",
];

#[derive(Debug, Clone)]
pub struct Tokenizer {
    stopwords: BTreeSet<String>,
    min_len: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::with_stopwords(DEFAULT_STOPWORDS)
    }
}

impl Tokenizer {
    pub fn with_stopwords<I, S>(stopwords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            stopwords: stopwords.into_iter().map(Into::into).collect(),
            min_len: 2,
        }
    }

    /// Lowercases and splits on anything that is not a letter, a digit or a
    /// hyphen joining two alphanumerics. Short tokens and stopwords are dropped.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let lower: Vec<char> = text.to_lowercase().chars().collect();
        let mut tokens = Vec::new();
        let mut current = String::new();
        for (i, &c) in lower.iter().enumerate() {
            let keep = c.is_alphanumeric()
                || (c == '-'
                    && !current.is_empty()
                    && lower.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
            if keep {
                current.push(c);
            } else if !current.is_empty() {
                self.push_token(&mut tokens, std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            self.push_token(&mut tokens, current);
        }
        tokens
    }

    fn push_token(&self, tokens: &mut Vec<String>, token: String) {
        if token.chars().count() >= self.min_len && !self.stopwords.contains(&token) {
            tokens.push(token);
        }
    }
}

/// Tokenizes with the default stopword list.
pub fn tokenize(text: &str) -> Vec<String> {
    Tokenizer::default().tokenize(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermStats {
    pub term_id: u32,
    pub df: u32,
    pub idf: f64,
}

/// Smoothed inverse document frequency, `ln((1 + N) / (1 + df)) + 1`.
pub fn smoothed_idf(corpus_size: usize, df: usize) -> f64 {
    ((1.0 + corpus_size as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Global term table: document frequencies and idf weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TermLexicon {
    terms: BTreeMap<String, TermStats>,
    by_id: Vec<String>,
    corpus_size: usize,
}

impl TermLexicon {
    /// Builds the lexicon from pre-tokenized documents. Term ids follow
    /// lexicographic term order.
    pub fn from_token_lists<I, T>(docs: I) -> Result<Self, VectorError>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[String]>,
    {
        let mut df: BTreeMap<String, u32> = BTreeMap::new();
        let mut n = 0usize;
        for tokens in docs {
            n += 1;
            let unique: BTreeSet<&String> = tokens.as_ref().iter().collect();
            for term in unique {
                *df.entry(term.clone()).or_default() += 1;
            }
        }
        if n == 0 {
            return Err(VectorError::EmptyCorpus);
        }
        Ok(Self::from_document_frequencies(n, df))
    }

    pub fn build<'a, I>(docs: I, tokenizer: &Tokenizer) -> Result<Self, VectorError>
    where
        I: IntoIterator<Item = &'a Document>,
    {
        Self::from_token_lists(docs.into_iter().map(|d| tokenizer.tokenize(&d.full_text())))
    }

    fn from_document_frequencies(corpus_size: usize, df: BTreeMap<String, u32>) -> Self {
        let mut terms = BTreeMap::new();
        let mut by_id = Vec::with_capacity(df.len());
        for (term_id, (term, df)) in df.into_iter().enumerate() {
            terms.insert(
                term.clone(),
                TermStats {
                    term_id: term_id as u32,
                    df,
                    idf: smoothed_idf(corpus_size, df as usize),
                },
            );
            by_id.push(term);
        }
        Self {
            terms,
            by_id,
            corpus_size,
        }
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn get(&self, term: &str) -> Option<&TermStats> {
        self.terms.get(term)
    }

    pub fn term(&self, term_id: u32) -> Option<&str> {
        self.by_id.get(term_id as usize).map(String::as_str)
    }

    pub fn idf(&self, term_id: u32) -> Option<f64> {
        self.term(term_id).and_then(|t| self.get(t)).map(|s| s.idf)
    }

    /// Terms in lexicographic (equivalently term-id) order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &TermStats)> {
        self.terms.iter().map(|(t, s)| (t.as_str(), s))
    }

    /// TF-IDF vector for a token sequence; out-of-lexicon tokens are skipped.
    /// Returns `None` when no token is in the lexicon.
    pub fn weigh_tokens(&self, tokens: &[String]) -> Option<SparseVector> {
        let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
        for token in tokens {
            if let Some(stats) = self.terms.get(token) {
                *tf.entry(stats.term_id).or_default() += 1;
            }
        }
        if tf.is_empty() {
            return None;
        }
        let entries = tf
            .into_iter()
            .map(|(id, count)| {
                let idf = self.terms[&self.by_id[id as usize]].idf;
                (id, (1.0 + (count as f64).ln()) * idf)
            })
            .collect();
        SparseVector::from_sorted(entries).normalized()
    }

    pub fn to_file(&self) -> LexiconFile {
        LexiconFile {
            corpus_size: self.corpus_size,
            terms: self
                .iter()
                .map(|(term, s)| LexiconTerm {
                    term: term.to_string(),
                    term_id: s.term_id,
                    df: s.df,
                    idf: s.idf,
                })
                .collect(),
        }
    }

    pub fn from_file(file: LexiconFile) -> Self {
        let mut terms = BTreeMap::new();
        let mut by_id = vec![String::new(); file.terms.len()];
        for t in file.terms {
            if let Some(slot) = by_id.get_mut(t.term_id as usize) {
                *slot = t.term.clone();
            }
            terms.insert(
                t.term,
                TermStats {
                    term_id: t.term_id,
                    df: t.df,
                    idf: t.idf,
                },
            );
        }
        Self {
            terms,
            by_id,
            corpus_size: file.corpus_size,
        }
    }
}

/// On-disk lexicon layout (`lexicon.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconFile {
    pub corpus_size: usize,
    pub terms: Vec<LexiconTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconTerm {
    pub term: String,
    pub term_id: u32,
    pub df: u32,
    pub idf: f64,
}

/// Sparse vector keyed by term id, entries sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
    norm: f64,
}

impl SparseVector {
    /// `entries` must be sorted by term id without duplicates.
    pub fn from_sorted(entries: Vec<(u32, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        Self { entries, norm }
    }

    pub fn from_map(entries: &BTreeMap<u32, f64>) -> Self {
        Self::from_sorted(entries.iter().map(|(&k, &v)| (k, v)).collect())
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, term_id: u32) -> Option<f64> {
        self.entries
            .binary_search_by_key(&term_id, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    /// Scales to unit norm; `None` for a zero vector.
    pub fn normalized(self) -> Option<Self> {
        if self.norm == 0.0 {
            return None;
        }
        let norm = self.norm;
        Some(Self::from_sorted(
            self.entries.into_iter().map(|(k, w)| (k, w / norm)).collect(),
        ))
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn cosine(&self, other: &SparseVector) -> Result<f64, VectorError> {
        if self.norm == 0.0 || other.norm == 0.0 {
            return Err(VectorError::ZeroNorm);
        }
        Ok((self.dot(other) / (self.norm * other.norm)).clamp(-1.0, 1.0))
    }
}

/// Dense document vector of fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(components: Vec<f64>) -> Self {
        Self(components)
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// `Σ uᵢvᵢ / (‖u‖‖v‖)`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, VectorError> {
    if u.len() != v.len() {
        return Err(VectorError::DimensionMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(VectorError::ZeroNorm);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// TF-IDF vector of a document over title, abstract and body.
pub fn tfidf_vector(
    doc: &Document,
    lexicon: &TermLexicon,
    tokenizer: &Tokenizer,
) -> Result<SparseVector, VectorError> {
    lexicon
        .weigh_tokens(&tokenizer.tokenize(&doc.full_text()))
        .ok_or_else(|| VectorError::EmptyVector(doc.id.clone()))
}

/// Source of dense document vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, doc_id: &str, tfidf: &SparseVector) -> Result<DenseVector, VectorError>;
}

/// Seeded random projection of TF-IDF vectors.
///
/// Column `t` of the projection matrix holds `dim` values from
/// `{-1/√dim, +1/√dim}` drawn from a ChaCha stream keyed by `(seed, t)`, so a
/// column never depends on the size or order of the lexicon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomProjection {
    pub dim: usize,
    pub seed: u64,
}

impl RandomProjection {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    /// Column `term_id` of the projection matrix.
    pub fn column(&self, term_id: u32) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(term_id as u64);
        let scale = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| if rng.gen::<bool>() { scale } else { -scale })
            .collect()
    }

    pub fn project(&self, tfidf: &SparseVector) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(term_id, w) in tfidf.entries() {
            for (o, r) in out.iter_mut().zip(self.column(term_id)) {
                *o += w * r;
            }
        }
        out
    }
}

impl EmbeddingProvider for RandomProjection {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, doc_id: &str, tfidf: &SparseVector) -> Result<DenseVector, VectorError> {
        let raw = self.project(tfidf);
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if tfidf.is_empty() || norm == 0.0 {
            return Err(VectorError::EmptyVector(doc_id.to_string()));
        }
        Ok(DenseVector(raw.into_iter().map(|x| x / norm).collect()))
    }
}

/// Externally supplied vectors keyed by document id.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl PrecomputedEmbeddings {
    pub fn new(records: impl IntoIterator<Item = DenseRecord>) -> Result<Self, VectorError> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for rec in records {
            let d = *dim.get_or_insert(rec.components.len());
            if rec.components.len() != d {
                return Err(VectorError::DimensionMismatch(d, rec.components.len()));
            }
            if rec.components.iter().any(|x| !x.is_finite()) {
                return Err(VectorError::NonFinite(rec.id));
            }
            vectors.insert(rec.id, rec.components);
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            vectors,
        })
    }
}

impl EmbeddingProvider for PrecomputedEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, doc_id: &str, _tfidf: &SparseVector) -> Result<DenseVector, VectorError> {
        let v = self
            .vectors
            .get(doc_id)
            .ok_or_else(|| VectorError::MissingEmbedding(doc_id.to_string()))?;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(VectorError::ZeroNorm);
        }
        Ok(DenseVector(v.iter().map(|x| x / norm).collect()))
    }
}

/// Dense embedding through the random-projection baseline.
pub fn embed(
    doc: &Document,
    lexicon: &TermLexicon,
    tokenizer: &Tokenizer,
    dim: usize,
    seed: u64,
) -> Result<DenseVector, VectorError> {
    let tfidf = tfidf_vector(doc, lexicon, tokenizer)?;
    RandomProjection::new(dim, seed).embed(&doc.id, &tfidf)
}

/// One line of `vectors_tfidf.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseRecord {
    pub id: String,
    pub entries: Vec<(u32, f64)>,
}

/// One line of `vectors_dense.jsonl` or `embeddings.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseRecord {
    pub id: String,
    pub components: Vec<f64>,
}

/// TF-IDF and dense vectors for a set of documents, keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorSet {
    pub tfidf: BTreeMap<String, SparseVector>,
    pub dense: BTreeMap<String, DenseVector>,
}

impl VectorSet {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.tfidf.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tfidf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tfidf.is_empty()
    }

    pub fn insert(&mut self, id: String, tfidf: SparseVector, dense: DenseVector) {
        self.tfidf.insert(id.clone(), tfidf);
        self.dense.insert(id, dense);
    }

    /// Vectorizes every document. Fails on the first document without
    /// in-lexicon tokens.
    pub fn compute<'a, I>(
        docs: I,
        lexicon: &TermLexicon,
        tokenizer: &Tokenizer,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, VectorError>
    where
        I: IntoIterator<Item = &'a Document>,
    {
        let mut set = Self::default();
        for doc in docs {
            let tfidf = tfidf_vector(doc, lexicon, tokenizer)?;
            let dense = provider.embed(&doc.id, &tfidf)?;
            set.insert(doc.id.clone(), tfidf, dense);
        }
        Ok(set)
    }

    pub fn sparse_records(&self) -> Vec<SparseRecord> {
        self.tfidf
            .iter()
            .map(|(id, v)| SparseRecord {
                id: id.clone(),
                entries: v.entries().to_vec(),
            })
            .collect()
    }

    pub fn dense_records(&self) -> Vec<DenseRecord> {
        self.dense
            .iter()
            .map(|(id, v)| DenseRecord {
                id: id.clone(),
                components: v.components().to_vec(),
            })
            .collect()
    }

    pub fn from_records(sparse: Vec<SparseRecord>, dense: Vec<DenseRecord>) -> Self {
        Self {
            tfidf: sparse
                .into_iter()
                .map(|r| (r.id, SparseVector::from_sorted(r.entries)))
                .collect(),
            dense: dense
                .into_iter()
                .map(|r| (r.id, DenseVector(r.components)))
                .collect(),
        }
    }
}
