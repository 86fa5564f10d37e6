use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use netmap_core::corpus::{read_corpus, EntityType, IngestConfig, DEFAULT_MAX_AUTHORS};
use netmap_core::enrich::system_year;
use netmap_core::graph::DEFAULT_MAX_NODES;
use netmap_core::index::{build_index, CorpusIndex, IndexConfig, DEFAULT_TOP_LINKS};
use netmap_core::pipeline::{run_pipeline, LabelingMode, NetworkRequest, PipelineContext};
use netmap_service::perimeters::PerimeterRegistry;
use netmap_service::server::{router, AppState};

#[derive(Parser)]
#[command(name = "netmap", version, about = "Co-occurrence network maps from enriched publication corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a JSONL corpus and write an index snapshot.
    Index {
        corpus: PathBuf,
        #[arg(long)]
        index_path: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_AUTHORS)]
        max_authors: usize,
        /// Unify labels that share an entity id.
        #[arg(long)]
        merge_labels: bool,
        /// Also write the ingest report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build one map and write it as VOSviewer JSON.
    Network {
        #[arg(long, default_value = "netmap.idx")]
        index_path: PathBuf,
        #[arg(long, default_value = "")]
        q: String,
        #[arg(long, default_value = "topic")]
        model: EntityType,
        #[arg(long, default_value_t = DEFAULT_MAX_NODES as u64, value_parser = clap::value_parser!(u64).range(2..))]
        max_nodes: u64,
        #[arg(long, default_value_t = DEFAULT_TOP_LINKS, value_parser = positive)]
        top_links: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "fallback")]
        labeling: LabelingMode,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replay a stored chat-completion response instead of calling the endpoint.
        #[arg(long)]
        llm_fixture: Option<PathBuf>,
        #[arg(long)]
        current_year: Option<i32>,
        /// Perimeter store, required with --perimeter.
        #[arg(long, requires = "perimeter")]
        perimeters: Option<PathBuf>,
        #[arg(long, requires = "perimeters")]
        perimeter: Option<String>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value = "netmap.idx")]
        index_path: PathBuf,
        /// Perimeter store, created on first registration.
        #[arg(long)]
        perimeters: Option<PathBuf>,
        #[arg(long)]
        llm_fixture: Option<PathBuf>,
        #[arg(long)]
        current_year: Option<i32>,
    },
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be positive".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn load_index(path: &Path) -> Result<CorpusIndex> {
    // The author filter ran at ingest; the snapshot holds only kept records.
    let cfg = IndexConfig { max_authors: usize::MAX };
    CorpusIndex::load(path, &cfg).with_context(|| format!("loading index {}", path.display()))
}

fn cmd_index(corpus: &Path, index_path: &Path, max_authors: usize, merge_labels: bool, report: Option<&Path>) -> Result<()> {
    let file = File::open(corpus).with_context(|| format!("opening {}", corpus.display()))?;
    let cfg = IngestConfig { max_authors, merge_labels };
    let (pubs, ingest) = read_corpus(BufReader::new(file), &cfg).with_context(|| format!("reading {}", corpus.display()))?;
    let ix = build_index(pubs, &IndexConfig { max_authors })?;
    ix.save(index_path).with_context(|| format!("writing {}", index_path.display()))?;
    let text = serde_json::to_string_pretty(&ingest)?;
    if let Some(path) = report {
        std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index { corpus, index_path, max_authors, merge_labels, report } => {
            cmd_index(&corpus, &index_path, max_authors, merge_labels, report.as_deref())
        }
        Command::Network {
            index_path,
            q,
            model,
            max_nodes,
            top_links,
            seed,
            labeling,
            out,
            llm_fixture,
            current_year,
            perimeters,
            perimeter,
        } => {
            let ix = load_index(&index_path)?;
            let client = netmap_service::label_client(llm_fixture.as_deref())
                .with_context(|| "reading --llm-fixture".to_string())?;
            let restrict = match (&perimeters, &perimeter) {
                (Some(store), Some(id)) => match PerimeterRegistry::open(store)?.get(id) {
                    Some(p) => Some(p),
                    None => bail!("unknown perimeter {id:?}"),
                },
                _ => None,
            };
            let req = NetworkRequest {
                q,
                model,
                max_nodes: max_nodes as usize,
                top_links,
                perimeter_id: perimeter,
                seed,
                labeling,
            };
            let ctx = PipelineContext {
                index: &ix,
                label_client: client.as_deref(),
                current_year: current_year.unwrap_or_else(system_year),
            };
            let (resp, _) = run_pipeline(&ctx, &req, restrict.as_deref())?;
            let mut json = resp.document.to_json();
            json.push('\n');
            match out {
                Some(path) => std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{json}"),
            }
            eprintln!("{}", serde_json::to_string(&resp.diagnostics)?);
            Ok(())
        }
        Command::Serve { port, host, index_path, perimeters, llm_fixture, current_year } => {
            let ix = Arc::new(load_index(&index_path)?);
            let registry = Arc::new(match perimeters {
                Some(path) => PerimeterRegistry::open(path)?,
                None => PerimeterRegistry::in_memory(),
            });
            let client = netmap_service::label_client(llm_fixture.as_deref())?;
            let state = Arc::new(AppState::new(ix, registry, client, current_year.unwrap_or_else(system_year)));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .with_context(|| format!("binding {host}:{port}"))?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, router(state))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                Ok(())
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
