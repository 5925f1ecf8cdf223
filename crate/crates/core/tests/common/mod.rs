#![allow(dead_code)]

use std::path::Path;

use etymo::corpus::{Document, PubDate};
pub use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};


pub fn doc(id: &str, date: &str, title: &str, body: &str) -> Document {
    Document {
        id: id.to_string(),
        title: title.to_string(),
        authors: vec![format!("Author {id}")],
        venue: "Test Venue".to_string(),
        published: date.parse::<PubDate>().unwrap(),
        abstract_text: String::new(),
        body: body.to_string(),
    }
}

/// Body-only document so the token stream is exactly `body`.
pub fn bare(id: &str, date: &str, body: &str) -> Document {
    doc(id, date, "", body)
}

pub fn toy3() -> Vec<Document> {
    vec![
        bare("A", "2020-01-01", "cat cat dog"),
        bare("B", "2020-01-02", "dog fish"),
        bare("C", "2020-01-03", "fish fish fish"),
    ]
}

pub fn write_jsonl(path: &Path, docs: &[Document]) {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).unwrap());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

const CORE: [&str; 20] = [
    "t-sne", "embedding", "manifold", "neighbor", "perplexity", "visualization", "gradient",
    "stochastic", "divergence", "kernel", "projection", "cluster", "similarity", "dimension",
    "affinity", "distribution", "optimization", "heavy-tailed", "layout", "mapping",
];

/// Query used against [`reorder_fixture`].
pub const REORDER_QUERY: &str = "t-sne";

/// Twelve documents: a mid-dated hub `S` sharing a 20-term core with ten
/// satellites `D01..D10`, and an isolated `T` that says "t-sne" twice among
/// a few unrelated words. `T` wins on text alone; `S` wins once network
/// ratings apply.
pub fn reorder_fixture() -> Vec<Document> {
    let core = CORE.join(" ");
    let mut docs = vec![bare("S", "2015-06-01", &core)];
    for i in 1..=10 {
        let extras: Vec<String> = (0..5).map(|j| format!("topic{i}x{j}")).collect();
        let year = if i <= 5 { 2009 + i } else { 2010 + i };
        docs.push(bare(
            &format!("D{i:02}"),
            &format!("{year}-03-01"),
            &format!("{core} {}", extras.join(" ")),
        ));
    }
    docs.push(bare(
        "T",
        "2018-09-01",
        "t-sne t-sne tutorial notebook walkthrough slides",
    ));
    docs
}

/// Random corpus over a small vocabulary so that many pairs clear the
/// similarity threshold.
pub fn random_corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<Document> {
    let vocab: Vec<String> = (0..12).map(|i| format!("word{i}")).collect();
    (0..n)
        .map(|i| {
            let len = rng.gen_range(3..12);
            let words: Vec<&str> = (0..len)
                .map(|_| vocab.choose(rng).unwrap().as_str())
                .collect();
            let date = format!("20{:02}-{:02}-01", rng.gen_range(10..20), rng.gen_range(1..13));
            bare(&format!("r{i:03}"), &date, &words.join(" "))
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub mod criteria;
