//! Builds a small corpus, then inserts a new paper without a full rebuild.

use etymo::pipeline::{BuildTarget, Pipeline};
use etymo::EngineConfig;

fn line(id: &str, date: &str, body: &str) -> String {
    serde_json::json!({
        "id": id, "title": id, "authors": ["X"], "venue": "V",
        "published": date, "abstract": "", "body": body,
    })
    .to_string()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let base = dir.path().join("base.jsonl");
    let lines = [
        line("g1", "2015-01-01", "graph ranking pagerank citation"),
        line("g2", "2016-01-01", "graph ranking citation network"),
        line("g3", "2017-01-01", "pagerank citation network analysis"),
        line("m1", "2018-01-01", "embedding map visualization"),
    ];
    std::fs::write(&base, lines.join("\n"))?;
    let config = EngineConfig { k: 2, ..EngineConfig::default() };
    let pipeline = Pipeline::open(dir.path().join("data"), config)?;
    pipeline.ingest(&base)?;
    pipeline.build(BuildTarget::All, false)?;

    let new = dir.path().join("new.jsonl");
    std::fs::write(&new, line("g4", "2020-01-01", "pagerank graph ranking citation network"))?;
    let report = pipeline.insert(&new)?;
    println!("version {} inserted {:?}", report.version, report.inserted);

    let graph = pipeline.load_graph()?;
    for (n, w) in graph.neighbors("g4") {
        println!("  g4 - {n}  {w:.4}");
    }
    let p = pipeline.load_layout()?.get("g4").unwrap();
    println!("placed at ({:.3}, {:.3}) approx={}", p.x, p.y, p.approx);
    Ok(())
}
