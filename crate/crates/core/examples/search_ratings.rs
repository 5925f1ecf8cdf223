//! Ingests a corpus, builds every stage and compares plain text ranking with
//! network-boosted ranking for one query.

use etymo::pipeline::{BuildTarget, Pipeline};
use etymo::server::ApiSnapshot;
use etymo::EngineConfig;

const CORPUS: &str = r#"{"id":"S","title":"Visualizing data using t-sne","authors":["A"],"venue":"J","published":"2008-11-01","abstract":"t-sne embeds high dimensional data in two dimensions","body":"stochastic neighbor embedding perplexity gradient descent visualization"}
{"id":"E1","title":"Embedding citation graphs","authors":["B"],"venue":"J","published":"2012-03-01","abstract":"neighbor embedding of citation networks","body":"stochastic neighbor embedding perplexity visualization of graphs"}
{"id":"E2","title":"Perplexity calibration","authors":["C"],"venue":"J","published":"2014-06-01","abstract":"choosing perplexity for neighbor embedding","body":"stochastic neighbor embedding perplexity gradient descent"}
{"id":"T","title":"A t-sne tutorial","authors":["D"],"venue":"Blog","published":"2019-01-01","abstract":"t-sne t-sne walkthrough","body":"notebook slides"}
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let input = dir.path().join("corpus.jsonl");
    std::fs::write(&input, CORPUS)?;
    let pipeline = Pipeline::open(dir.path().join("data"), EngineConfig { alpha: 0.3, ..EngineConfig::default() })?;
    pipeline.ingest(&input)?;
    pipeline.build(BuildTarget::All, false)?;

    let snapshot = ApiSnapshot::load(&pipeline)?;
    let engine = snapshot.engine();
    for rated in [false, true] {
        println!("network ratings: {rated}");
        for r in engine.search("t-sne embedding", 5, rated) {
            println!("  {}. {:<3} text {:.4}  rating {:.4}  final {:.4}", r.position, r.doc_id, r.text_score, r.network_rating, r.final_score);
        }
    }
    Ok(())
}
