//! Pieces of the `emtree` command that are worth testing on their own:
//! settings, local replay and the HTTP client.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use emtree_core::agent::QaResult;
use emtree_core::config::{BackendKind, EngineConfig};
use emtree_core::engine::Memory;
use emtree_core::events::{read_events, EventRecord};
use emtree_core::forgetting::SweepReport;
use emtree_core::lm::TokenUsage;
use emtree_core::time::{Duration, Timestamp};
use emtree_core::tree::{HistoryTree, GOAL_LEVEL};
use emtree_service::ServiceConfig;

pub const DEFAULT_ADDR: &str = "127.0.0.1:7311";

/// Contents of the `--config` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub addr: String,
    pub engine: EngineConfig,
    pub service: ServiceConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings { addr: DEFAULT_ADDR.into(), engine: EngineConfig::default(), service: ServiceConfig::default() }
    }
}

impl Settings {
    pub fn from_toml_str(s: &str) -> anyhow::Result<Self> {
        let s: Settings = toml::from_str(s)?;
        s.engine.validate()?;
        Ok(s)
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::from_toml_str(&text).with_context(|| format!("in {}", p.display()))
            }
            None => Ok(Settings::default()),
        }
    }

    pub fn with_backend(mut self, backend: Option<BackendKind>) -> Self {
        if let Some(b) = backend {
            self.engine.lm.backend = b;
        }
        self
    }
}

pub fn load_events(path: &Path) -> anyhow::Result<Vec<EventRecord>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_events(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ReplaySummary {
    pub events: usize,
    pub updates: usize,
    pub sweeps_changed: usize,
    pub forgotten_nodes: usize,
    pub nodes: usize,
    pub goal_or_higher: usize,
    pub placeholders: usize,
    pub version: u64,
    pub structural_hash: u64,
    pub lm_usage: TokenUsage,
}

fn note_sweep(summary: &mut ReplaySummary, r: &SweepReport) {
    if r.changed() {
        summary.sweeps_changed += 1;
    }
    summary.forgotten_nodes += r.forgotten;
}

/// Replays records in process, on their own clock: a goal idle for longer
/// than the idle gap is closed before the next record, and every commit is
/// followed by a sweep.
pub fn replay_local(memory: &mut Memory, events: &[EventRecord]) -> anyhow::Result<ReplaySummary> {
    let mut s = ReplaySummary { events: events.len(), ..Default::default() };
    let idle = memory.config().derive.idle_gap;
    for rec in events {
        if let Some(last) = memory.ingestor().last_event() {
            let due = last + idle + Duration::from_secs(1);
            if due <= rec.at && memory.flush_idle(due)?.is_some() {
                s.updates += 1;
                let r = memory.sweep(due)?;
                note_sweep(&mut s, &r);
            }
        }
        if memory.ingest(std::slice::from_ref(rec))?.is_some() {
            s.updates += 1;
            let r = memory.sweep(rec.at)?;
            note_sweep(&mut s, &r);
        }
    }
    if let Some(end) = events.last().map(|r| r.at) {
        if memory.flush()?.is_some() {
            s.updates += 1;
        }
        let r = memory.sweep(end)?;
        note_sweep(&mut s, &r);
    }
    let tree = memory.tree();
    s.nodes = tree.node_count();
    s.goal_or_higher = tree.count_at_or_above(GOAL_LEVEL);
    s.placeholders = tree.placeholder_count();
    s.version = tree.version();
    s.structural_hash = tree.structural_hash();
    s.lm_usage = memory.gateway().ledger().total();
    Ok(s)
}

pub fn save_tree(tree: &HistoryTree, path: &Path) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    emtree_core::tree::write_tree(tree, &mut buf)?;
    std::fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

pub fn load_tree(path: &Path) -> anyhow::Result<HistoryTree> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(emtree_core::tree::read_tree(std::io::BufReader::new(f))?)
}

/// Answers from a saved tree; "now" is the end of the newest memory.
pub fn ask_local(engine: &EngineConfig, tree: HistoryTree, question: &str) -> anyhow::Result<QaResult> {
    let now = tree.latest_end().unwrap_or(Timestamp::from_secs(0));
    let memory = Memory::new(engine.clone(), engine.lm.gateway()?).with_tree(tree);
    Ok(memory.ask(question, now)?)
}

/// Blocking client for a running `emtree serve`.
pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(server: &str) -> anyhow::Result<Self> {
        let base = if server.starts_with("http://") || server.starts_with("https://") {
            server.trim_end_matches('/').to_string()
        } else {
            format!("http://{}", server.trim_end_matches('/'))
        };
        let http = reqwest::blocking::Client::builder().timeout(None).build()?;
        Ok(Client { base, http })
    }

    fn post(&self, path: &str, body: &impl Serialize) -> anyhow::Result<serde_json::Value> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send()?;
        let status = resp.status();
        let v: serde_json::Value = resp.json().unwrap_or(serde_json::Value::Null);
        if !status.is_success() {
            bail!("{path}: {status}: {}", v.get("error").and_then(|e| e.as_str()).unwrap_or("no detail"));
        }
        Ok(v)
    }

    pub fn ask(&self, text: &str) -> anyhow::Result<QaResult> {
        Ok(serde_json::from_value(self.post("/ask", &serde_json::json!({ "text": text }))?)?)
    }

    pub fn feedback(&self, text: &str) -> anyhow::Result<u64> {
        let v = self.post("/feedback", &serde_json::json!({ "text": text }))?;
        v.get("rules_version").and_then(|x| x.as_u64()).context("reply has no rules_version")
    }

    /// Sends records in chunks; returns the queue depth after the last one.
    pub fn send_events(&self, events: &[EventRecord], chunk: usize) -> anyhow::Result<usize> {
        let mut depth = 0;
        for c in events.chunks(chunk.max(1)) {
            let v = self.post("/events", &c)?;
            depth = v.get("queue_depth").and_then(|x| x.as_u64()).unwrap_or(0) as usize;
        }
        Ok(depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_settings_keep_defaults() {
        let s = Settings::from_toml_str(
            r#"
addr = "0.0.0.0:7311"

[engine.builder]
max_depth = 8
lifetimes = [900, 3600, 86400]

[engine.forgetting]
relevance = true
nightly_hour = 3

[engine.lm]
backend = "http"

[engine.lm.http]
endpoint = "http://localhost:8000/v1/chat/completions"
model = "my-model"

[service]
batch_cap = 64
snapshot_dir = "/var/lib/emtree"
"#,
        )
        .unwrap();
        assert_eq!(s.engine.lm.backend, BackendKind::Http);
        assert_eq!(s.engine.builder.visibility_window, EngineConfig::default().builder.visibility_window);
        assert_eq!(s.service.keep_snapshots, 5);
        let s = s.with_backend(Some(BackendKind::Scripted));
        assert_eq!(s.engine.lm.backend, BackendKind::Scripted);
    }

    #[test]
    fn rejects_unknown_backend_and_bad_engine() {
        assert!(Settings::from_toml_str("[engine.lm]\nbackend = \"magic\"\n").is_err());
        assert!(Settings::from_toml_str("[engine.forgetting]\nnightly_hour = 25\n").is_err());
    }
}
