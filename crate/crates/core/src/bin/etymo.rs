use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use etymo::config::CONFIG_FILE;
use etymo::pipeline::{BuildTarget, DataDirLock, Pipeline, PipelineError};
use etymo::server::{self, ApiSnapshot, AppState, ReloadPolicy};
use etymo::EngineConfig;

#[derive(Debug, Parser)]
#[command(name = "etymo", version, about = "Network-ranked literature search")]
struct Cli {
    /// Data directory holding the corpus and build artifacts.
    #[arg(long, env = "ETYMO_DATA", default_value = "data", global = true)]
    data: PathBuf,
    /// Config file; defaults to <data>/etymo.toml.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set alpha=0.4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Append documents from a JSONL file to the corpus.
    Ingest { file: PathBuf },
    /// Build artifacts: lexicon, vectors, graph, rank, layout or all.
    Build {
        #[arg(long, default_value = "all")]
        stage: BuildTarget,
        /// Rebuild even when upstream artifacts are stale.
        #[arg(long)]
        force: bool,
    },
    /// Query the built index.
    Search {
        query: String,
        #[arg(long, default_value_t = 10)]
        limit: usize,
        /// Rank by text similarity alone.
        #[arg(long)]
        no_network_rating: bool,
        #[arg(long)]
        json: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "ETYMO_ADDR", default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Add documents to a built network without a full rebuild.
    Insert { file: PathBuf },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let config_path = cli.config.clone().unwrap_or_else(|| cli.data.join(CONFIG_FILE));
    let config = match EngineConfig::load(&config_path, &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(cli, config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli, config: EngineConfig) -> Result<(), PipelineError> {
    if let Err(source) = std::fs::create_dir_all(&cli.data) {
        return Err(PipelineError::Io { path: cli.data, source });
    }
    let pipeline = Pipeline::open(&cli.data, config)?;
    match cli.command {
        Command::Ingest { file } => {
            let _lock = DataDirLock::acquire(&cli.data)?;
            let added = pipeline.ingest(&file)?;
            println!("ingested {added} documents ({} total)", pipeline.store().len());
        }
        Command::Build { stage, force } => {
            let _lock = DataDirLock::acquire(&cli.data)?;
            let report = pipeline.build(stage, force)?;
            let names: Vec<&str> = report.stages.iter().map(|s| s.name()).collect();
            println!("built {} (version {})", names.join(", "), report.version);
        }
        Command::Insert { file } => {
            let _lock = DataDirLock::acquire(&cli.data)?;
            let report = pipeline.insert(&file)?;
            for (id, links) in &report.inserted {
                println!("{id}: linked to {}", links.len());
            }
            println!("version {}", report.version);
        }
        Command::Search { query, limit, no_network_rating, json } => {
            let snapshot = ApiSnapshot::load(&pipeline)?;
            let hits = snapshot.engine().search(&query, limit, !no_network_rating);
            if json {
                println!("{}", serde_json::to_string_pretty(&hits).expect("results serialize"));
            } else if hits.is_empty() {
                println!("no results");
            } else {
                for hit in &hits {
                    let doc = &snapshot.documents[&hit.doc_id];
                    println!(
                        "{:>3}  {:.4}  {:<30}  {}  {}",
                        hit.position,
                        hit.final_score,
                        truncate(&doc.authors.join(", "), 30),
                        doc.published.year(),
                        doc.title
                    );
                }
            }
        }
        Command::Serve { addr } => {
            let snapshot = ApiSnapshot::load(&pipeline)?;
            let state = Arc::new(AppState::new(snapshot, pipeline.store().clone()));
            let reload = ReloadPolicy {
                data: cli.data.clone(),
                config,
                interval: Duration::from_secs(2),
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|source| PipelineError::Io {
                path: cli.data.clone(),
                source,
            })?;
            runtime
                .block_on(server::serve(addr, state, Some(reload)))
                .map_err(|source| PipelineError::Io { path: cli.data, source })?;
        }
    }
    Ok(())
}

fn truncate(s: &str, width: usize) -> String {
    if s.chars().count() <= width {
        s.to_string()
    } else {
        let cut: String = s.chars().take(width - 1).collect();
        format!("{cut}…")
    }
}
