//! Serves the JSON API over a freshly built data directory.
//!
//! ```text
//! cargo run --example serve_api -- 127.0.0.1:8080
//! curl 'http://127.0.0.1:8080/api/search?q=ranking'
//! ```

use std::sync::Arc;

use etymo::pipeline::{BuildTarget, Pipeline};
use etymo::server::{serve, ApiSnapshot, AppState};
use etymo::EngineConfig;

const CORPUS: &str = r#"{"id":"a","title":"Graph ranking","authors":["A"],"venue":"V","published":"2015-01-01","abstract":"ranking papers","body":"graph ranking pagerank citation"}
{"id":"b","title":"Citation networks","authors":["B"],"venue":"V","published":"2017-01-01","abstract":"ranking papers","body":"graph ranking citation network"}
{"id":"c","title":"Maps of science","authors":["C"],"venue":"V","published":"2019-01-01","abstract":"embedding maps","body":"embedding map visualization"}
"#;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let addr = std::env::args().nth(1).unwrap_or_else(|| "127.0.0.1:8080".into()).parse()?;
    let dir = tempfile::tempdir()?;
    let input = dir.path().join("corpus.jsonl");
    std::fs::write(&input, CORPUS)?;
    let pipeline = Pipeline::open(dir.path().join("data"), EngineConfig::default())?;
    pipeline.ingest(&input)?;
    pipeline.build(BuildTarget::All, false)?;

    let state = Arc::new(AppState::new(ApiSnapshot::load(&pipeline)?, pipeline.store().clone()));
    println!("listening on http://{addr}");
    serve(addr, state, None).await?;
    Ok(())
}
