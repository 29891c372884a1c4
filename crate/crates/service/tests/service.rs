use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration as StdDuration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use parking_lot::{Condvar, Mutex};
use tower::ServiceExt;

use emtree_core::config::EngineConfig;
use emtree_core::events::{EventKind, EventRecord};
use emtree_core::lm::parse::RelevanceScore;
use emtree_core::lm::{
    Gateway, GroupingBehavior, LmBackend, LmError, LmReply, LmRequest, PromptKind, RelevanceBehavior, ScriptedBackend,
};
use emtree_core::time::{Duration, Timestamp};
use emtree_core::tree::read_tree;
use emtree_service::{http, Service, ServiceConfig, VirtualClock};

/// Scripted replies, but calls of the gated kinds wait while the gate is shut.
struct Gated {
    inner: ScriptedBackend,
    kinds: BTreeSet<PromptKind>,
    open: Mutex<bool>,
    cv: Condvar,
    waiting: AtomicUsize,
    calls: Mutex<Vec<PromptKind>>,
}

impl Gated {
    fn new(inner: ScriptedBackend, kinds: &[PromptKind]) -> Arc<Self> {
        Arc::new(Gated {
            inner,
            kinds: kinds.iter().copied().collect(),
            open: Mutex::new(true),
            cv: Condvar::new(),
            waiting: AtomicUsize::new(0),
            calls: Mutex::new(Vec::new()),
        })
    }

    fn shut(&self) {
        *self.open.lock() = false;
    }

    fn release(&self) {
        *self.open.lock() = true;
        self.cv.notify_all();
    }

    fn count(&self, kind: PromptKind) -> usize {
        self.calls.lock().iter().filter(|k| **k == kind).count()
    }
}

impl LmBackend for Gated {
    fn complete(&self, request: &LmRequest) -> Result<LmReply, LmError> {
        self.calls.lock().push(request.kind);
        if self.kinds.contains(&request.kind) {
            let mut open = self.open.lock();
            if !*open {
                self.waiting.fetch_add(1, Ordering::SeqCst);
                while !*open {
                    self.cv.wait(&mut open);
                }
                self.waiting.fetch_sub(1, Ordering::SeqCst);
            }
        }
        self.inner.complete(request)
    }
}

const T0: i64 = 1_713_945_600; // 2024-04-24 08:00 UTC

fn t(s: i64) -> Timestamp {
    Timestamp::from_secs(T0 + s)
}

fn skill(at: i64, s: &str) -> EventRecord {
    EventRecord::new(t(at), EventKind::SkillStart, &[("skill", s)])
}

/// Pick-and-move pairs; every pickup ends a goal.
fn chores(from: i64, n: usize) -> Vec<EventRecord> {
    (0..n as i64)
        .flat_map(|i| {
            let at = from + i * 20;
            [skill(at, &format!("Pickup(Cup_{i})")), skill(at + 10, &format!("Navigate(Table_{i})"))]
        })
        .collect()
}

fn wait_until(what: &str, timeout: StdDuration, mut f: impl FnMut() -> bool) {
    let deadline = Instant::now() + timeout;
    while !f() {
        assert!(Instant::now() < deadline, "timed out waiting for {what}");
        std::thread::sleep(StdDuration::from_millis(2));
    }
}

fn start(backend: Arc<Gated>, config: ServiceConfig, clock: VirtualClock) -> Arc<Service> {
    let mut engine = EngineConfig::default();
    engine.forgetting.nightly_hour = 3;
    let gw = Gateway::from_arc(backend);
    Arc::new(Service::start(engine, config, gw, Arc::new(clock)).unwrap())
}

fn scripted() -> ScriptedBackend {
    ScriptedBackend::new().grouping(GroupingBehavior::AppendToLatest).max_group(4)
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn post(app: &axum::Router, uri: &str, json: serde_json::Value) -> (StatusCode, serde_json::Value) {
    let req = Request::post(uri).header("content-type", "application/json").body(Body::from(json.to_string())).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
}

#[tokio::test(flavor = "multi_thread")]
async fn paused_update_serves_previous_version_and_burst_forms_one_batch() {
    let gate = Gated::new(scripted(), &[PromptKind::Grouping, PromptKind::SimpleSummarize]);
    let clock = VirtualClock::new(t(0));
    let svc = start(gate.clone(), ServiceConfig { batch_cap: 128, ..Default::default() }, clock);
    let app = http::router(svc.clone());

    svc.ingest(chores(0, 3)).unwrap();
    assert!(svc.wait_idle(StdDuration::from_secs(10)));
    let v1 = svc.latest_snapshot().version();
    assert!(v1 >= 1);

    gate.shut();
    svc.ingest(chores(100, 3)).unwrap();
    wait_until("update to block", StdDuration::from_secs(10), || gate.waiting.load(Ordering::SeqCst) > 0);

    let (status, body) = get(&app, "/tree").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(read_tree(&body[..]).unwrap().version(), v1);
    assert_eq!(svc.latest_snapshot().version(), v1);
    let m = svc.metrics();
    assert!(m.processing);
    assert_eq!(m.pending, 6);

    let burst: Vec<EventRecord> = chores(1000, 50);
    for r in burst {
        svc.ingest(vec![r]).unwrap();
    }
    assert_eq!(svc.metrics().pending, 106);
    gate.release();
    assert!(svc.wait_idle(StdDuration::from_secs(30)));
    assert!(svc.latest_snapshot().version() > v1);
    let sizes = svc.batch_sizes();
    assert_eq!(&sizes[sizes.len() - 2..], &[6, 100]);
    let m = svc.metrics();
    assert_eq!((m.received, m.processed, m.pending), (112, 112, 0));
}

#[test]
fn default_cap_splits_a_burst() {
    let gate = Gated::new(scripted(), &[PromptKind::Grouping, PromptKind::SimpleSummarize]);
    let svc = start(gate.clone(), ServiceConfig::default(), VirtualClock::new(t(0)));
    gate.shut();
    svc.ingest(chores(0, 1)).unwrap();
    svc.ingest(chores(100, 1)).unwrap();
    wait_until("update to block", StdDuration::from_secs(10), || gate.waiting.load(Ordering::SeqCst) > 0);
    for r in chores(1000, 50) {
        svc.ingest(vec![r]).unwrap();
    }
    gate.release();
    assert!(svc.wait_idle(StdDuration::from_secs(30)));
    let sizes = svc.batch_sizes();
    assert_eq!(sizes.iter().sum::<usize>(), 104);
    assert!(sizes.iter().all(|s| *s <= 64), "{sizes:?}");
    assert!(sizes.ends_with(&[64, 36]), "{sizes:?}");
}

#[test]
fn ingest_interrupts_sweep_before_next_model_call() {
    let backend = scripted().relevance(RelevanceBehavior::Constant(RelevanceScore::Infinite));
    let gate = Gated::new(backend, &[PromptKind::RelevanceEstimation]);
    let clock = VirtualClock::new(t(0));
    let svc = start(gate.clone(), ServiceConfig::default(), clock.clone());
    svc.ingest(chores(0, 10)).unwrap();
    assert!(svc.wait_idle(StdDuration::from_secs(10)));
    wait_until("post-commit sweep", StdDuration::from_secs(10), || !svc.sweep_reports().is_empty());
    assert_eq!(gate.count(PromptKind::RelevanceEstimation), 0, "nothing has expired yet");
    let before = svc.sweep_reports().len();

    gate.shut();
    clock.advance(Duration::days(400));
    svc.request_sweep();
    wait_until("sweep to reach the model", StdDuration::from_secs(10), || gate.waiting.load(Ordering::SeqCst) > 0);
    let calls = gate.count(PromptKind::RelevanceEstimation);
    svc.ingest(vec![skill(400 * 86_400 + 5, "Navigate(Sink)")]).unwrap();
    gate.release();
    wait_until("sweep to stop", StdDuration::from_secs(10), || svc.sweep_reports().len() > before);
    let r = svc.sweep_reports()[before];
    assert!(r.interrupted, "{r:?}");
    assert_eq!(r.lm_calls as usize, 1);
    assert_eq!(calls, 1);
    svc.latest_snapshot().validate().unwrap();
}

#[test]
fn counters_balance_at_every_observation() {
    let gate = Gated::new(scripted(), &[]);
    let svc = start(gate, ServiceConfig { batch_cap: 7, ..Default::default() }, VirtualClock::new(t(0)));
    let feeder = {
        let svc = svc.clone();
        std::thread::spawn(move || {
            let all = chores(0, 250);
            let mut rng = 12345u64;
            let mut i = 0;
            while i < all.len() {
                rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let n = 1 + (rng >> 60) as usize;
                let end = (i + n).min(all.len());
                svc.ingest(all[i..end].to_vec()).unwrap();
                i = end;
            }
        })
    };
    for _ in 0..1000 {
        let m = svc.metrics();
        assert_eq!(m.received, m.processed + m.pending, "{m:?}");
        std::thread::yield_now();
    }
    feeder.join().unwrap();
    assert!(svc.wait_idle(StdDuration::from_secs(30)));
    let m = svc.metrics();
    assert_eq!((m.received, m.processed, m.pending, m.delay_secs), (500, 500, 0, 0));
    assert_eq!(m.update_errors, 0);
}

#[test]
fn delay_is_age_of_oldest_pending_record() {
    let gate = Gated::new(scripted(), &[PromptKind::Grouping, PromptKind::SimpleSummarize]);
    let clock = VirtualClock::new(t(0));
    let svc = start(gate.clone(), ServiceConfig::default(), clock.clone());
    assert_eq!(svc.metrics().delay_secs, 0);
    gate.shut();
    svc.ingest(chores(0, 2)).unwrap();
    svc.ingest(vec![skill(40, "Pickup(Fork_0)")]).unwrap();
    clock.advance(Duration::from_secs(30));
    let m = svc.metrics();
    assert_eq!(m.pending, 5);
    assert_eq!(m.delay_secs, 30 + 40 - 30);
    gate.release();
    assert!(svc.wait_idle(StdDuration::from_secs(10)));
    assert_eq!(svc.metrics().delay_secs, 0);
}

#[test]
fn rejects_out_of_order_and_invalid_records() {
    let svc = start(Gated::new(scripted(), &[]), ServiceConfig::default(), VirtualClock::new(t(0)));
    assert_eq!(svc.ingest(vec![skill(100, "Pickup(Cup_0)")]).unwrap().accepted, 1);
    assert!(svc.ingest(vec![skill(50, "Pickup(Cup_1)")]).is_err());
    let bad = EventRecord::new(t(200), EventKind::Face, &[]);
    assert!(svc.ingest(vec![skill(150, "Navigate(Sink)"), bad]).is_err());
    assert_eq!(svc.metrics().received, 1);
}

#[test]
fn nightly_sweep_runs_when_idle() {
    let gate = Gated::new(scripted(), &[]);
    let clock = VirtualClock::new(t(0));
    let svc = start(gate, ServiceConfig { tick_ms: 5, ..Default::default() }, clock.clone());
    svc.ingest(chores(0, 3)).unwrap();
    assert!(svc.wait_idle(StdDuration::from_secs(10)));
    // 02:00 the next day: the open goal is flushed and swept, but it is not
    // yet the nightly hour.
    clock.set(Timestamp::from_secs(T0 - 8 * 3600 + 86_400 + 2 * 3600));
    std::thread::sleep(StdDuration::from_millis(200));
    let settled = svc.metrics().sweeps;
    std::thread::sleep(StdDuration::from_millis(100));
    assert_eq!(svc.metrics().sweeps, settled);
    clock.set(Timestamp::from_secs(T0 - 8 * 3600 + 86_400 + 3 * 3600));
    wait_until("nightly sweep", StdDuration::from_secs(5), || svc.metrics().sweeps > settled);
    std::thread::sleep(StdDuration::from_millis(100));
    assert_eq!(svc.metrics().sweeps, settled + 1, "once per night");
}

#[test]
fn snapshots_persist_and_survive_a_bad_newest_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig { snapshot_dir: Some(dir.path().to_path_buf()), batch_cap: 2, ..Default::default() };
    let last = {
        let svc = start(Gated::new(scripted(), &[]), config.clone(), VirtualClock::new(t(0)));
        for k in 0..8 {
            svc.ingest(chores(k * 100, 1)).unwrap();
            assert!(svc.wait_idle(StdDuration::from_secs(10)));
        }
        svc.latest_snapshot().version()
    };
    let store = emtree_service::SnapshotStore::open(dir.path(), 5).unwrap();
    let versions = store.versions().unwrap();
    assert_eq!(versions.len(), 5);
    assert_eq!(versions[0].0, last);
    std::fs::write(&versions[0].1, "emtree/1\n{not json").unwrap();
    assert_eq!(store.load_latest().unwrap().version(), versions[1].0);

    let svc = start(Gated::new(scripted(), &[]), config, VirtualClock::new(t(0)));
    assert_eq!(svc.latest_snapshot().version(), versions[1].0);
    assert!(svc.ingest(vec![skill(50, "Pickup(Cup_9)")]).is_err(), "older than the stored tree");
}

#[tokio::test(flavor = "multi_thread")]
async fn http_api_round_trip() {
    let svc = start(Gated::new(scripted(), &[]), ServiceConfig::default(), VirtualClock::new(t(0)));
    let app = http::router(svc.clone());

    let (s, body) = get(&app, "/health").await;
    assert_eq!((s, body.as_slice()), (StatusCode::OK, &b"ok"[..]));

    let recs = serde_json::to_value(chores(0, 3)).unwrap();
    let (s, ack) = post(&app, "/events", recs).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ack["accepted"], 6);
    let one = serde_json::to_value(skill(200, "Navigate(Sink)")).unwrap();
    assert_eq!(post(&app, "/events", one).await.1["accepted"], 1);
    let old = serde_json::to_value(skill(10, "Navigate(Sink)")).unwrap();
    assert_eq!(post(&app, "/events", old).await.0, StatusCode::BAD_REQUEST);
    assert!(svc.wait_idle(StdDuration::from_secs(10)));

    let (s, m) = get(&app, "/metrics").await;
    assert_eq!(s, StatusCode::OK);
    let m: serde_json::Value = serde_json::from_slice(&m).unwrap();
    assert_eq!(m["received"], 7);
    assert_eq!(m["processed"], 7);
    let version = m["version"].as_u64().unwrap();
    let (_, tree) = get(&app, &format!("/tree?version={version}")).await;
    let tree = read_tree(&tree[..]).unwrap();
    assert_eq!(tree.node_count() as u64, m["node_count"].as_u64().unwrap());
    assert_eq!(get(&app, "/tree?version=999").await.0, StatusCode::NOT_FOUND);

    let (s, qa) = post(&app, "/ask", serde_json::json!({"text": "When did you pickup the cup?"})).await;
    assert_eq!(s, StatusCode::OK);
    assert!(qa["answer"].as_str().unwrap().contains("2024/04/24 08:00"), "{qa}");
    assert_eq!(post(&app, "/ask", serde_json::json!({"text": " "})).await.0, StatusCode::BAD_REQUEST);

    let (_, r0) = get(&app, "/rules").await;
    let r0: serde_json::Value = serde_json::from_slice(&r0).unwrap();
    let (s, fb) = post(&app, "/feedback", serde_json::json!({"text": "You should always remember cups"})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(fb["rules_version"].as_u64().unwrap(), r0["version"].as_u64().unwrap() + 1);
    let (_, r1) = get(&app, "/rules").await;
    let r1: serde_json::Value = serde_json::from_slice(&r1).unwrap();
    assert_eq!(r1["rules"][0], "You should always remember cups");
    assert_eq!(post(&app, "/feedback", serde_json::json!({"text": ""})).await.0, StatusCode::BAD_REQUEST);
}
