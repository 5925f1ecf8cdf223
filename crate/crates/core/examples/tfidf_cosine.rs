//! Builds a lexicon over three short documents and prints pairwise cosines
//! for the TF-IDF vectors and their random-projection embeddings.

use etymo::vectorize::{cosine_similarity, embed, tfidf_vector};
use etymo::{Document, TermLexicon, Tokenizer};

fn doc(id: &str, body: &str) -> Document {
    serde_json::from_value(serde_json::json!({
        "id": id, "title": "", "authors": [], "venue": "",
        "published": "2020-01-01", "abstract": "", "body": body,
    }))
    .unwrap()
}

fn main() {
    let docs = [
        doc("a", "graph ranking with pagerank on citation graphs"),
        doc("b", "citation graphs and ranking of papers"),
        doc("c", "stochastic neighbor embedding for t-sne maps"),
    ];
    let tok = Tokenizer::default();
    let lexicon = TermLexicon::build(&docs, &tok).unwrap();
    println!("{} terms over {} docs", lexicon.len(), lexicon.corpus_size());

    let sparse: Vec<_> = docs.iter().map(|d| tfidf_vector(d, &lexicon, &tok).unwrap()).collect();
    let dense: Vec<_> = docs.iter().map(|d| embed(d, &lexicon, &tok, 256, 0).unwrap()).collect();
    for i in 0..docs.len() {
        for j in i + 1..docs.len() {
            let s = sparse[i].cosine(&sparse[j]).unwrap();
            let e = cosine_similarity(dense[i].components(), dense[j].components()).unwrap();
            println!("{}-{}  tfidf {s:.4}  dense {e:.4}", docs[i].id, docs[j].id);
        }
    }
}
