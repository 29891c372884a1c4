use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use emtree_cli::{ask_local, load_events, load_tree, replay_local, save_tree, Client, Settings};
use emtree_core::config::BackendKind;
use emtree_core::engine::Memory;
use emtree_core::time::Timestamp;
use emtree_eval::{run_matrix, EvalConfig};
use emtree_service::{http, Clock, Service, SystemClock, VirtualClock};

#[derive(Parser)]
#[command(name = "emtree", version, about = "Episodic memory tree for long robot histories")]
struct Cli {
    /// TOML settings: `addr`, `[engine]`, `[service]`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    lm_backend: Option<Backend>,
    /// Time follows the records instead of the wall clock.
    #[arg(long, global = true)]
    virtual_clock: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Scripted,
    Http,
}

impl From<Backend> for BackendKind {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Scripted => BackendKind::Scripted,
            Backend::Http => BackendKind::Http,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the memory service and its HTTP API.
    Serve {
        #[arg(long)]
        addr: Option<String>,
    },
    /// Feed an event file to a running service, or build a tree locally.
    Replay {
        events: PathBuf,
        #[arg(long)]
        server: Option<String>,
        /// Write the resulting tree here (local replay only).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ask a question.
    Ask {
        text: String,
        #[arg(long)]
        server: Option<String>,
        /// Answer from a saved tree instead of a service.
        #[arg(long, conflicts_with = "server")]
        tree: Option<PathBuf>,
    },
    /// Give feedback to a running service.
    Feedback {
        text: String,
        #[arg(long)]
        server: Option<String>,
    },
    /// Run an experiment matrix.
    Eval {
        config: PathBuf,
        /// Directory for runs.tsv, summary.tsv and details.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();

    let backend = cli.lm_backend.map(BackendKind::from);
    let settings = Settings::load(cli.config.as_deref())?.with_backend(backend);
    let server = |s: Option<String>| s.unwrap_or_else(|| settings.addr.clone());

    match cli.command {
        Command::Serve { addr } => {
            let addr: std::net::SocketAddr = addr.unwrap_or_else(|| settings.addr.clone()).parse().context("bad address")?;
            let clock: Arc<dyn Clock> = if cli.virtual_clock {
                Arc::new(VirtualClock::new(Timestamp::from_secs(0)))
            } else {
                Arc::new(SystemClock)
            };
            let gateway = settings.engine.lm.gateway()?;
            let service = Arc::new(Service::start(settings.engine.clone(), settings.service.clone(), gateway, clock)?);
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(http::serve(service.clone(), addr, async {
                let _ = tokio::signal::ctrl_c().await;
            }))?;
            if let Ok(s) = Arc::try_unwrap(service) {
                s.shutdown();
            }
        }
        Command::Replay { events, server: Some(url), out } => {
            if out.is_some() {
                anyhow::bail!("--out only applies to a local replay");
            }
            let records = load_events(&events)?;
            let depth = Client::new(&url)?.send_events(&records, settings.service.batch_cap)?;
            println!("sent {} records, queue depth {depth}", records.len());
        }
        Command::Replay { events, server: None, out } => {
            let records = load_events(&events)?;
            let mut memory = Memory::new(settings.engine.clone(), settings.engine.lm.gateway()?);
            let summary = replay_local(&mut memory, &records)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(p) = out {
                save_tree(memory.tree(), &p)?;
            }
        }
        Command::Ask { text, tree: Some(path), .. } => {
            let r = ask_local(&settings.engine, load_tree(&path)?, &text)?;
            println!("{}", r.answer);
        }
        Command::Ask { text, server: s, tree: None } => {
            let r = Client::new(&server(s))?.ask(&text)?;
            println!("{}", r.answer);
        }
        Command::Feedback { text, server: s } => {
            let v = Client::new(&server(s))?.feedback(&text)?;
            println!("rules version {v}");
        }
        Command::Eval { config, out } => {
            let mut cfg = EvalConfig::load(&config)?;
            if let Some(b) = backend {
                cfg.engine.lm.backend = b;
            }
            let result = run_matrix(&cfg)?;
            if let Some(dir) = out {
                result.write(&dir)?;
            }
            print!("{}", result.summary_tsv());
        }
    }
    Ok(())
}
