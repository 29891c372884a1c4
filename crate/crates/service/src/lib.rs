//! Long-running memory service.
//!
//! Records are appended to a queue by any number of callers. One update
//! thread drains the queue in batches into the tree; one sweep thread runs
//! forgetting when the queue is empty after a commit, and once a night when
//! the system is idle. Both write through the same [`Memory`], guarded by a
//! mutex; the sweep gives it up at its next node or model call once new
//! records arrive. Readers only ever see published snapshots.

mod clock;
pub mod http;
mod store;

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration as StdDuration;

use arc_swap::ArcSwap;
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use emtree_core::agent::{answer_question, QaResult};
use emtree_core::config::EngineConfig;
use emtree_core::engine::Memory;
use emtree_core::events::{EventError, EventRecord};
use emtree_core::forgetting::SweepReport;
use emtree_core::lm::{Gateway, LmError, TokenUsage};
use emtree_core::rules::{RuleSet, RuleStore, RulesError};
use emtree_core::time::{Duration, Timestamp};
use emtree_core::tree::HistoryTree;

pub use clock::{Clock, SystemClock, VirtualClock};
pub use store::SnapshotStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub batch_cap: usize,
    /// Published versions kept in memory for `GET /tree?version=`.
    pub history: usize,
    pub snapshot_dir: Option<PathBuf>,
    pub keep_snapshots: usize,
    /// How often the background threads look at the clock, in milliseconds.
    pub tick_ms: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { batch_cap: 64, history: 5, snapshot_dir: None, keep_snapshots: 5, tick_ms: 50 }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error("service is shutting down")]
    Stopped,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: usize,
    pub queue_depth: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub received: u64,
    /// Queued plus in the batch being merged.
    pub pending: u64,
    pub processed: u64,
    /// Age of the oldest pending record, in seconds.
    pub delay_secs: i64,
    pub processing: bool,
    pub version: u64,
    pub node_count: usize,
    pub goal_or_higher: usize,
    pub placeholders: usize,
    pub rules_version: u64,
    pub updates: u64,
    pub update_errors: u64,
    pub sweeps: u64,
    pub sweeps_interrupted: u64,
    pub last_sweep: Option<SweepReport>,
    pub lm_usage: TokenUsage,
}

#[derive(Default)]
struct Queue {
    pending: VecDeque<(EventRecord, Timestamp)>,
    in_flight: Vec<Timestamp>,
    last_accepted: Option<Timestamp>,
    received: u64,
    processed: u64,
    last_arrival: Option<Timestamp>,
    stop: bool,
}

#[derive(Default)]
struct SweepSignal {
    requested: bool,
    stop: bool,
}

struct Counters {
    updates: AtomicU64,
    update_errors: AtomicU64,
    sweeps: AtomicU64,
    sweeps_interrupted: AtomicU64,
}

struct Inner {
    config: ServiceConfig,
    clock: Arc<dyn Clock>,
    gateway: Gateway,
    agent: emtree_core::agent::AgentConfig,
    exploration: emtree_core::agent::ExplorationMode,
    queue: Mutex<Queue>,
    queue_cv: Condvar,
    sweep: Mutex<SweepSignal>,
    sweep_cv: Condvar,
    interrupt: AtomicBool,
    memory: Mutex<Memory>,
    rules: Arc<RuleStore>,
    snapshot: ArcSwap<HistoryTree>,
    history: Mutex<VecDeque<Arc<HistoryTree>>>,
    store: Option<SnapshotStore>,
    counters: Counters,
    sweep_log: Mutex<Vec<SweepReport>>,
    batch_log: Mutex<Vec<usize>>,
    nightly_idle: Duration,
    nightly_hour: u32,
}

/// Handle to a running service. Dropping it stops the background threads.
pub struct Service {
    inner: Arc<Inner>,
    threads: Vec<JoinHandle<()>>,
}

const LOG_CAP: usize = 1000;

fn push_bounded<T>(log: &mut Vec<T>, item: T) {
    if log.len() >= LOG_CAP {
        log.remove(0);
    }
    log.push(item);
}

impl Inner {
    fn publish(&self, tree: &HistoryTree) {
        let snap = Arc::new(tree.clone());
        if let Some(store) = &self.store {
            if let Err(e) = store.save(&snap) {
                tracing::error!("could not persist snapshot {}: {e}", snap.version());
            }
        }
        let mut h = self.history.lock();
        h.push_back(snap.clone());
        while h.len() > self.config.history.max(1) {
            h.pop_front();
        }
        self.snapshot.store(snap);
    }

    fn update_loop(&self) {
        let tick = StdDuration::from_millis(self.config.tick_ms.max(1));
        loop {
            let batch: Vec<EventRecord> = {
                let mut q = self.queue.lock();
                while q.pending.is_empty() && !q.stop {
                    if self.queue_cv.wait_for(&mut q, tick).timed_out() {
                        break;
                    }
                }
                if q.stop {
                    return;
                }
                let n = q.pending.len().min(self.config.batch_cap.max(1));
                let taken: Vec<(EventRecord, Timestamp)> = q.pending.drain(..n).collect();
                q.in_flight = taken.iter().map(|(_, arrived)| *arrived).collect();
                taken.into_iter().map(|(r, _)| r).collect()
            };
            let mut mem = if batch.is_empty() {
                // Idle tick: close a stale goal, but never wait for a sweep.
                match self.memory.try_lock() {
                    Some(m) => m,
                    None => continue,
                }
            } else {
                self.interrupt.store(true, Ordering::SeqCst);
                self.memory.lock()
            };
            let before = mem.tree().version();
            let result = if batch.is_empty() {
                mem.flush_idle(self.clock.now())
            } else {
                push_bounded(&mut self.batch_log.lock(), batch.len());
                mem.ingest(&batch)
            };
            if let Err(e) = &result {
                self.counters.update_errors.fetch_add(1, Ordering::Relaxed);
                tracing::error!("update failed: {e}");
            }
            let committed = mem.tree().version() != before;
            if committed {
                self.counters.updates.fetch_add(1, Ordering::Relaxed);
                self.publish(mem.tree());
            }
            drop(mem);
            let queue_empty = {
                let mut q = self.queue.lock();
                q.processed += q.in_flight.len() as u64;
                q.in_flight.clear();
                q.pending.is_empty()
            };
            if committed && queue_empty {
                self.request_sweep();
            }
        }
    }

    fn request_sweep(&self) {
        let mut s = self.sweep.lock();
        s.requested = true;
        self.sweep_cv.notify_all();
    }

    fn nightly_due(&self, last_night: &mut Option<i64>) -> bool {
        let now = self.clock.now();
        let day = now.secs().div_euclid(86_400);
        if now.hour_of_day() != self.nightly_hour || *last_night == Some(day) {
            return false;
        }
        let q = self.queue.lock();
        let idle = q.pending.is_empty()
            && q.in_flight.is_empty()
            && q.last_arrival.is_none_or(|t| now - t >= self.nightly_idle);
        if idle {
            *last_night = Some(day);
        }
        idle
    }

    fn sweep_loop(&self) {
        let tick = StdDuration::from_millis(self.config.tick_ms.max(1));
        let mut last_night = None;
        loop {
            {
                let mut s = self.sweep.lock();
                loop {
                    if s.stop {
                        return;
                    }
                    if s.requested {
                        s.requested = false;
                        break;
                    }
                    if self.sweep_cv.wait_for(&mut s, tick).timed_out() && self.nightly_due(&mut last_night) {
                        break;
                    }
                }
            }
            self.run_sweep();
        }
    }

    fn run_sweep(&self) -> Option<SweepReport> {
        let mut mem = self.memory.lock();
        // Records that arrived while we waited for the lock win.
        if !self.queue.lock().pending.is_empty() {
            return None;
        }
        self.interrupt.store(false, Ordering::SeqCst);
        let now = self.clock.now();
        let report = mem.sweep_interruptible(now, &|| self.interrupt.load(Ordering::SeqCst));
        match report {
            Ok(r) => {
                self.counters.sweeps.fetch_add(1, Ordering::Relaxed);
                if r.interrupted {
                    self.counters.sweeps_interrupted.fetch_add(1, Ordering::Relaxed);
                }
                if r.changed() {
                    self.publish(mem.tree());
                }
                push_bounded(&mut self.sweep_log.lock(), r);
                Some(r)
            }
            Err(e) => {
                tracing::error!("sweep failed: {e}");
                None
            }
        }
    }
}

impl Service {
    /// Starts the update and sweep threads. A stored snapshot, if any, is
    /// the starting tree.
    pub fn start(engine: EngineConfig, config: ServiceConfig, gateway: Gateway, clock: Arc<dyn Clock>) -> std::io::Result<Self> {
        let store = match &config.snapshot_dir {
            Some(dir) => Some(SnapshotStore::open(dir, config.keep_snapshots)?),
            None => None,
        };
        let mut memory = Memory::new(engine.clone(), gateway.clone());
        if let Some(t) = store.as_ref().and_then(SnapshotStore::load_latest) {
            tracing::info!("continuing from stored snapshot version {}", t.version());
            memory = memory.with_tree(t);
        }
        let first = Arc::new(memory.tree().clone());
        let inner = Arc::new(Inner {
            clock,
            gateway,
            agent: engine.agent,
            exploration: engine.exploration,
            queue: Mutex::new(Queue { last_accepted: first.latest_end(), ..Default::default() }),
            queue_cv: Condvar::new(),
            sweep: Mutex::new(SweepSignal::default()),
            sweep_cv: Condvar::new(),
            interrupt: AtomicBool::new(false),
            rules: memory.rules().clone(),
            memory: Mutex::new(memory),
            history: Mutex::new(VecDeque::from([first.clone()])),
            snapshot: ArcSwap::new(first),
            store,
            counters: Counters {
                updates: AtomicU64::new(0),
                update_errors: AtomicU64::new(0),
                sweeps: AtomicU64::new(0),
                sweeps_interrupted: AtomicU64::new(0),
            },
            sweep_log: Mutex::new(Vec::new()),
            batch_log: Mutex::new(Vec::new()),
            nightly_idle: engine.forgetting.idle_before_nightly,
            nightly_hour: engine.forgetting.nightly_hour,
            config,
        });
        let u = inner.clone();
        let s = inner.clone();
        let threads = vec![
            std::thread::Builder::new().name("emtree-update".into()).spawn(move || u.update_loop())?,
            std::thread::Builder::new().name("emtree-sweep".into()).spawn(move || s.sweep_loop())?,
        ];
        Ok(Service { inner, threads })
    }

    /// Queues records. All of them are checked first; on error none is
    /// queued.
    pub fn ingest(&self, records: Vec<EventRecord>) -> Result<Ack, ServiceError> {
        let mut q = self.inner.queue.lock();
        if q.stop {
            return Err(ServiceError::Stopped);
        }
        let mut last = q.last_accepted;
        for r in &records {
            r.validate()?;
            if let Some(l) = last {
                if r.at < l {
                    return Err(EventError::OutOfOrder { at: r.at, last: l }.into());
                }
            }
            last = Some(r.at);
        }
        let accepted = records.len();
        if accepted == 0 {
            return Ok(Ack { accepted, queue_depth: q.pending.len() });
        }
        self.inner.interrupt.store(true, Ordering::SeqCst);
        if let Some(l) = last {
            self.inner.clock.observe(l);
        }
        let now = self.inner.clock.now();
        for r in records {
            q.pending.push_back((r, now));
        }
        q.last_accepted = last;
        q.received += accepted as u64;
        q.last_arrival = Some(now);
        let depth = q.pending.len();
        self.inner.queue_cv.notify_all();
        Ok(Ack { accepted, queue_depth: depth })
    }

    /// Newest published tree; never waits for an update in progress.
    pub fn latest_snapshot(&self) -> Arc<HistoryTree> {
        self.inner.snapshot.load_full()
    }

    pub fn snapshot_version(&self, version: u64) -> Option<Arc<HistoryTree>> {
        self.inner.history.lock().iter().find(|t| t.version() == version).cloned()
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.inner.clock
    }

    pub fn gateway(&self) -> &Gateway {
        &self.inner.gateway
    }

    /// Answers on the snapshot current at the time of the call.
    pub fn ask(&self, question: &str) -> Result<QaResult, ServiceError> {
        let snap = self.latest_snapshot();
        let now = self.inner.clock.now();
        Ok(answer_question(&snap, question, now, self.inner.exploration, &self.inner.gateway, &self.inner.agent)?)
    }

    pub fn feedback(&self, text: &str) -> Result<u64, ServiceError> {
        let (set, _) = self.inner.rules.learn(text, &self.inner.gateway, self.inner.clock.now())?;
        Ok(set.version())
    }

    pub fn rules(&self) -> Arc<RuleSet> {
        self.inner.rules.pin()
    }

    /// Runs a sweep now on the calling thread, unless records are waiting.
    pub fn sweep_now(&self) -> Option<SweepReport> {
        self.inner.run_sweep()
    }

    pub fn request_sweep(&self) {
        self.inner.request_sweep();
    }

    /// Reports of the sweeps run so far, oldest first.
    pub fn sweep_reports(&self) -> Vec<SweepReport> {
        self.inner.sweep_log.lock().clone()
    }

    /// Sizes of the batches merged so far, oldest first.
    pub fn batch_sizes(&self) -> Vec<usize> {
        self.inner.batch_log.lock().clone()
    }

    pub fn metrics(&self) -> Metrics {
        let (received, processed, pending, oldest, processing) = {
            let q = self.inner.queue.lock();
            let oldest = q.in_flight.first().copied().or_else(|| q.pending.front().map(|(_, a)| *a));
            (q.received, q.processed, (q.pending.len() + q.in_flight.len()) as u64, oldest, !q.in_flight.is_empty())
        };
        let now = self.inner.clock.now();
        let snap = self.latest_snapshot();
        let c = &self.inner.counters;
        Metrics {
            received,
            pending,
            processed,
            delay_secs: oldest.map_or(0, |t| (now - t).secs().max(0)),
            processing,
            version: snap.version(),
            node_count: snap.node_count(),
            goal_or_higher: snap.count_at_or_above(emtree_core::tree::GOAL_LEVEL),
            placeholders: snap.placeholder_count(),
            rules_version: self.rules().version(),
            updates: c.updates.load(Ordering::Relaxed),
            update_errors: c.update_errors.load(Ordering::Relaxed),
            sweeps: c.sweeps.load(Ordering::Relaxed),
            sweeps_interrupted: c.sweeps_interrupted.load(Ordering::Relaxed),
            last_sweep: self.inner.sweep_log.lock().last().copied(),
            lm_usage: self.inner.gateway.ledger().total(),
        }
    }

    /// Waits until nothing is queued or being merged.
    pub fn wait_idle(&self, timeout: StdDuration) -> bool {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            {
                let q = self.inner.queue.lock();
                if q.pending.is_empty() && q.in_flight.is_empty() {
                    return true;
                }
            }
            if std::time::Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(StdDuration::from_millis(2));
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.inner.queue.lock().stop = true;
        self.inner.queue_cv.notify_all();
        self.inner.sweep.lock().stop = true;
        self.inner.sweep_cv.notify_all();
        self.inner.interrupt.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.stop();
    }
}
