use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use episodic_core::harness::bootstrap_memory;
use episodic_core::trajectory::read_jsonl;
use episodic_core::{compile, retrieve, MemoryStore, Workflow};
use episodic_server::config::{EmbedderKind, LlmKind, Settings};
use tokio::net::TcpListener;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "episodic",
    version,
    about = "Episodic workflow memory for agent crews"
)]
struct Cli {
    /// TOML settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Workflow store directory. WORKFLOW_STORE_DIR takes precedence.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RetrievalArgs {
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_results: Option<usize>,
    #[arg(long, value_enum)]
    embedder: Option<EmbedderKind>,
    #[arg(long)]
    embedder_endpoint: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[arg(long)]
        addr: Option<SocketAddr>,
        #[arg(long, value_enum)]
        llm: Option<LlmKind>,
        #[arg(long)]
        llm_endpoint: Option<String>,
        /// Keep sessions across restarts in this directory.
        #[arg(long)]
        sessions_dir: Option<PathBuf>,
    },
    /// Compile a trajectory log and print the workflow as JSON.
    Replay {
        trajectory: PathBuf,
        /// Also save the workflow to the store.
        #[arg(long)]
        save: bool,
    },
    /// Fill the store with seeded synthetic workflows.
    Bootstrap {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the ranked matches for a workflow JSON file.
    Match {
        workflow: PathBuf,
        #[command(flatten)]
        retrieval: RetrievalArgs,
    },
}

impl RetrievalArgs {
    fn apply(self, s: &mut Settings) {
        if let Some(t) = self.threshold {
            s.threshold = t;
        }
        if let Some(k) = self.max_results {
            s.max_results = k;
        }
        if let Some(e) = self.embedder {
            s.embedder = e;
        }
        if self.embedder_endpoint.is_some() {
            s.embedder_endpoint = self.embedder_endpoint;
        }
    }
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

async fn shutdown_signal() {
    if let Err(e) = tokio::signal::ctrl_c().await {
        tracing::error!("cannot listen for ctrl-c: {e}");
        std::future::pending::<()>().await;
    }
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let mut settings = Settings::load(cli.config.as_deref())?;
    if let Some(store) = cli.store {
        settings.store = store;
    }
    settings.apply_env();

    match cli.command {
        Command::Serve {
            retrieval,
            addr,
            llm,
            llm_endpoint,
            sessions_dir,
        } => {
            retrieval.apply(&mut settings);
            if let Some(addr) = addr {
                settings.addr = addr.to_string();
            }
            if let Some(llm) = llm {
                settings.llm = llm;
            }
            if llm_endpoint.is_some() {
                settings.llm_endpoint = llm_endpoint;
            }
            if sessions_dir.is_some() {
                settings.sessions_dir = sessions_dir;
            }
            let gateway = Arc::new(settings.build_gateway()?);
            if let Some(dir) = settings.sessions_dir.as_deref().filter(|d| d.exists()) {
                let n = gateway.restore_sessions(dir)?;
                tracing::info!(sessions = n, "restored sessions");
            }
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = TcpListener::bind(&settings.addr)
                    .await
                    .with_context(|| format!("binding {}", settings.addr))?;
                let local = listener.local_addr()?;
                println!("listening on http://{local}");
                std::io::stdout().flush()?;
                tracing::info!(store = %settings.store.display(), "serving on {local}");
                episodic_server::serve(listener, Arc::clone(&gateway), shutdown_signal()).await?;
                anyhow::Ok(())
            })?;
            if let Some(dir) = &settings.sessions_dir {
                let n = gateway.snapshot_sessions(dir)?;
                tracing::info!(sessions = n, "saved sessions");
            }
        }
        Command::Replay { trajectory, save } => {
            let file = std::fs::File::open(&trajectory)
                .with_context(|| format!("opening {}", trajectory.display()))?;
            let events = read_jsonl(BufReader::new(file))?;
            let workflow = compile(&events)?;
            if save {
                let receipt = settings.open_store()?.save(&workflow, true)?;
                eprintln!(
                    "{} {}",
                    if receipt.duplicate {
                        "already stored as"
                    } else {
                        "saved as"
                    },
                    receipt.record_id
                );
            }
            print_json(&workflow)?;
        }
        Command::Bootstrap { count, seed } => {
            let store = settings.open_store()?;
            for id in bootstrap_memory(count, seed, &store)? {
                println!("{id}");
            }
        }
        Command::Match {
            workflow,
            retrieval,
        } => {
            retrieval.apply(&mut settings);
            let bytes = std::fs::read(&workflow)
                .with_context(|| format!("reading {}", workflow.display()))?;
            let query = Workflow::deserialize(&bytes)?;
            let store = settings.open_store()?;
            let matches = retrieve(
                &query,
                &store,
                &settings.retrieval_config()?,
                settings.build_embedder()?.as_ref(),
            )?;
            print_json(&matches)?;
        }
    }
    Ok(())
}
