//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process fails if any check does.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::hash::{DefaultHasher, Hash, Hasher};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration as StdDuration, Instant};

use parking_lot::{Condvar, Mutex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emtree_core::config::EngineConfig;
use emtree_core::engine::Memory;
use emtree_core::events::{EventKind, EventRecord};
use emtree_core::forgetting::{initial_expiration, sweep_tree, Lifetimes, SweepContext};
use emtree_core::lm::parse::RelevanceScore;
use emtree_core::lm::{
    Gateway, GroupingBehavior, LmBackend, LmError, LmReply, LmRequest, PromptKind, RelevanceBehavior, ScriptedBackend,
    TokenUsage,
};
use emtree_core::rules::RuleSet;
use emtree_core::time::{Duration, TimeSpan, Timestamp};
use emtree_core::tree::{read_tree, Child, ForgottenPlaceholder, HistoryTree, NodeId, TreeNode};
use emtree_eval::{
    generate_episodes, run_matrix, synthesize_history, EvalConfig, ExperimentReport, GeneratorConfig, HistoryConfig,
    MatrixOutput, Variant,
};
use emtree_service::{http, Service, ServiceConfig, VirtualClock};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const T0: i64 = 1_713_945_600; // 2024-04-24 08:00 UTC
const DAY: i64 = 86_400;

fn ts(s: i64) -> Timestamp {
    Timestamp::from_secs(s)
}

// ---------------------------------------------------------------------------
// Expiration math

fn expiration_math() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let n = rng.random_range(1..=5);
        let per: Vec<i64> = (0..n).map(|_| rng.random_range(1..=30 * DAY)).collect();
        let lifetimes = Lifetimes::new(per.iter().map(|s| Duration::from_secs(*s)).collect());
        let level: u8 = rng.random_range(0..=9);
        let start = rng.random_range(0..4_000_000_000i64);
        let end = start + rng.random_range(0..10 * DAY);
        let dt = per[(level as usize).min(n - 1)];
        let gamma = if level <= 3 { 1 } else { 2i64.pow(level as u32 - 3) };
        let want = end + dt * gamma;
        let got = initial_expiration(level, ts(end), &lifetimes).secs();
        ensure(got == want, || format!("case {case}: level {level}, end {end}, dt {dt}: {got} != {want}"))?;
    }
    Ok("1000 cases exact".into())
}

// ---------------------------------------------------------------------------
// Pure-decay sweep against a brute-force oracle

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    t: i64,
    budget: usize,
    now: i64,
}

impl Gen<'_> {
    fn placeholder(&mut self) -> Child {
        let start = self.t;
        self.t += self.rng.random_range(0..600);
        let span = TimeSpan::new(ts(start), ts(self.t));
        self.t += self.rng.random_range(1..600);
        Child::Forgotten(ForgottenPlaceholder { span, short_summary: format!("gone {start}") })
    }

    fn children(&mut self, level: u8, max: usize) -> Vec<Child> {
        let k = self.rng.random_range(1..=max);
        let mut out: Vec<Child> = Vec::new();
        for _ in 0..k {
            if self.budget == 0 {
                break;
            }
            let prev_ph = out.last().is_some_and(Child::is_placeholder);
            if !prev_ph && self.rng.random_bool(0.12) {
                out.push(self.placeholder());
            } else {
                out.push(Child::Node(self.node(level)));
            }
        }
        out
    }

    fn node(&mut self, level: u8) -> TreeNode {
        self.budget -= 1;
        let mut n = if level == 0 {
            let start = self.t;
            self.t += self.rng.random_range(0..60);
            let span = TimeSpan::new(ts(start), ts(self.t));
            self.t += self.rng.random_range(1..3600);
            TreeNode::detached(0, span, format!("scene at {start}"))
        } else {
            let kids = self.children(level - 1, 4);
            let hull = TimeSpan::hull_all(kids.iter().map(Child::span).collect::<Vec<_>>().iter());
            let span = hull.unwrap_or_else(|| {
                let s = TimeSpan::point(ts(self.t));
                self.t += 1;
                s
            });
            let mut n = TreeNode::detached(level, span, format!("level {level} from {}\nmore detail", span.start.secs()));
            n.children = kids;
            n
        };
        let offset = self.rng.random_range(1..2 * DAY);
        let lapsed = self.rng.random_bool(0.5 / (1.0 + level as f64));
        n.expiration = ts(if lapsed { self.now - offset } else { self.now + offset });
        n.never_expires = self.rng.random_bool(0.04);
        n
    }
}

fn random_tree(rng: &mut ChaCha8Rng) -> (HistoryTree, Timestamp) {
    let depth: u8 = rng.random_range(1..=6);
    let now = T0 + 30 * DAY;
    let mut g = Gen { rng, t: T0, budget: 200, now };
    let mut tree = HistoryTree::new(depth);
    let tops = g.children(depth - 1, 6);
    for mut c in tops {
        if let Child::Node(n) = &mut c {
            tree.adopt(n);
        }
        tree.push_top(c);
    }
    (tree, ts(now))
}

fn expired(n: &TreeNode, now: Timestamp) -> bool {
    !n.never_expires && n.expiration.secs() < now.secs()
}

fn first_line(s: &str) -> String {
    s.lines().next().unwrap_or("").trim().chars().take(200).collect()
}

fn all_ids(children: &[Child], out: &mut Vec<NodeId>) {
    for c in children {
        if let Child::Node(n) = c {
            out.push(n.id);
            all_ids(&n.children, out);
        }
    }
}

/// Topmost expired nodes: these and everything below them must go.
fn topmost_expired(children: &[Child], now: Timestamp, out: &mut Vec<NodeId>) {
    for c in children {
        if let Child::Node(n) = c {
            if expired(n, now) {
                out.push(n.id);
            } else {
                topmost_expired(&n.children, now, out);
            }
        }
    }
}

/// Expected children after a pure-decay sweep: expired subtrees become
/// tombstones, tombstone runs collapse, survivors expire no earlier than
/// their surviving children.
fn expected(children: &[Child], now: Timestamp) -> Vec<Child> {
    let mapped: Vec<Child> = children
        .iter()
        .map(|c| match c {
            Child::Forgotten(p) => Child::Forgotten(p.clone()),
            Child::Node(n) if expired(n, now) => {
                Child::Forgotten(ForgottenPlaceholder { span: n.span, short_summary: first_line(&n.summary) })
            }
            Child::Node(n) => {
                let mut m = n.clone();
                m.children = expected(&n.children, now);
                for k in m.children.iter().filter_map(Child::as_node) {
                    m.expiration = m.expiration.max(k.expiration);
                    m.never_expires |= k.never_expires;
                }
                Child::Node(m)
            }
        })
        .collect();
    let mut out: Vec<Child> = Vec::new();
    let mut run: Vec<ForgottenPlaceholder> = Vec::new();
    let flush = |run: &mut Vec<ForgottenPlaceholder>, out: &mut Vec<Child>| {
        if run.is_empty() {
            return;
        }
        let start = run.iter().map(|p| p.span.start).min().unwrap();
        let end = run.iter().map(|p| p.span.end).max().unwrap();
        let texts: Vec<&str> = run.iter().map(|p| p.short_summary.as_str()).filter(|s| !s.is_empty()).collect();
        let short_summary = first_line(&texts.join("; "));
        out.push(Child::Forgotten(ForgottenPlaceholder { span: TimeSpan::new(start, end), short_summary }));
        run.clear();
    };
    for c in mapped {
        match c {
            Child::Forgotten(p) => run.push(p),
            node => {
                flush(&mut run, &mut out);
                out.push(node);
            }
        }
    }
    flush(&mut run, &mut out);
    out
}

fn pure_decay_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lifetimes = Lifetimes::default();
    let rules = RuleSet::new();
    let ctx = SweepContext { lifetimes: &lifetimes, gateway: None, rules: &rules, lm_call_budget: None };
    let (mut nodes, mut gone_total) = (0, 0);
    for i in 0..200 {
        let (mut tree, now) = random_tree(&mut rng);
        let before = tree.clone();
        let mut ids = Vec::new();
        all_ids(before.children(), &mut ids);
        ensure(ids.len() <= 200, || format!("tree {i} has {} nodes", ids.len()))?;
        before.validate().map_err(|e| format!("tree {i} generated invalid: {e}"))?;
        nodes += ids.len();

        let mut top = Vec::new();
        topmost_expired(before.children(), now, &mut top);
        let mut must_go: HashSet<NodeId> = HashSet::new();
        for id in &top {
            let mut sub = Vec::new();
            all_ids(std::slice::from_ref(&Child::Node(before.find(*id).unwrap().clone())), &mut sub);
            must_go.extend(sub);
        }

        let report = sweep_tree(&mut tree, now, &ctx).map_err(|e| e.to_string())?;
        let mut left = Vec::new();
        all_ids(tree.children(), &mut left);
        let left: HashSet<NodeId> = left.into_iter().collect();
        let gone: HashSet<NodeId> = ids.iter().copied().filter(|id| !left.contains(id)).collect();
        ensure(gone == must_go, || format!("tree {i}: forgot {} nodes, oracle says {}", gone.len(), must_go.len()))?;
        ensure(report.forgotten == top.len(), || format!("tree {i}: report {} vs {}", report.forgotten, top.len()))?;
        ensure(tree.children() == expected(before.children(), now).as_slice(), || format!("tree {i}: shape differs"))?;
        tree.validate().map_err(|e| format!("tree {i}: {e}"))?;
        ensure(tree.nodes().iter().all(|n| !expired(n, now)), || format!("tree {i}: an expired node survived"))?;
        gone_total += gone.len();
    }
    Ok(format!("200 trees, {nodes} nodes, {gone_total} forgotten, exact match"))
}

// ---------------------------------------------------------------------------
// Parent dominance under a fuzzed update/sweep sequence

/// Scripted replies with random relevance.
struct RandomRelevance {
    inner: ScriptedBackend,
    rng: Mutex<ChaCha8Rng>,
}

impl LmBackend for RandomRelevance {
    fn complete(&self, request: &LmRequest) -> Result<LmReply, LmError> {
        if request.kind != PromptKind::RelevanceEstimation {
            return self.inner.complete(request);
        }
        let v = self.rng.lock().random_range(0..6u32);
        let text = match v {
            5 => "Relevance: inf".to_string(),
            v => format!("Relevance: {}", v.saturating_sub(2)),
        };
        Ok(LmReply { text, usage: TokenUsage::new(10, 2) })
    }
}

const SKILLS: &[&str] = &[
    "Navigate(Sink)",
    "Pickup(Cup_0)",
    "Fill(Cup_0)",
    "Navigate(Table)",
    "Place(Cup_0)",
    "Open(Fridge)",
    "Pickup(Egg_1)",
    "Close(Fridge)",
    "Slice(Bread_2)",
];

fn random_gap(rng: &mut ChaCha8Rng) -> i64 {
    match rng.random_range(0..10) {
        0 => rng.random_range(4 * 3600..3 * DAY),
        1 | 2 => rng.random_range(600..4 * 3600),
        _ => rng.random_range(5..60),
    }
}

fn parent_dominance() -> Check {
    let mut sweeps = 0;
    for run in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + run);
        let mut config = EngineConfig::default();
        config.builder.max_depth = 6;
        let backend = RandomRelevance {
            inner: ScriptedBackend::new().grouping(GroupingBehavior::AppendToLatest).max_group(4),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(200 + run)),
        };
        let mut m = Memory::new(config, Gateway::new(backend));
        let mut t = T0;
        let mut updates = 0;
        while updates < 50 {
            t += random_gap(&mut rng);
            let skill = SKILLS[rng.random_range(0..SKILLS.len())];
            let rec = EventRecord::new(ts(t), EventKind::SkillStart, &[("skill", skill)]);
            if m.ingest(&[rec]).map_err(|e| e.to_string())?.is_none() {
                continue;
            }
            updates += 1;
            let now = ts(t + rng.random_range(0..2 * DAY));
            let r = m.sweep(now).map_err(|e| e.to_string())?;
            ensure(!r.interrupted, || "sweep interrupted".into())?;
            sweeps += 1;
            m.tree().check_parent_dominance().map_err(|e| format!("run {run}, update {updates}: {e}"))?;
            m.tree().validate().map_err(|e| format!("run {run}, update {updates}: {e}"))?;
        }
    }
    Ok(format!("10 runs x 50 updates, {sweeps} sweeps, 0 violations"))
}

// ---------------------------------------------------------------------------
// Frontier stability over a 500-event replay

fn subtree_hash(n: &TreeNode) -> u64 {
    let mut h = DefaultHasher::new();
    n.hash(&mut h);
    h.finish()
}

fn frontier_stability() -> Check {
    let keep = frontier_replay(false)?;
    let forget = frontier_replay(true)?;
    Ok(format!("without forgetting {keep}; with forgetting {forget}"))
}

fn frontier_replay(forgetting: bool) -> Check {
    let mut config = EngineConfig::default();
    config.forgetting.enabled = forgetting;
    let episodes = generate_episodes(80, 7, &GeneratorConfig::default());
    let history = synthesize_history(&episodes, 80, 7, &HistoryConfig::default()).map_err(|e| e.to_string())?;
    let events = &history.events[..500.min(history.events.len())];
    ensure(events.len() == 500, || format!("history has only {} events", history.events.len()))?;
    let idle = config.derive.idle_gap;
    let mut m = Memory::new(config.clone(), config.lm.gateway().map_err(|e| e.to_string())?);
    let (mut updates, mut checked) = (0, 0);

    let mut step = |m: &mut Memory, now: Timestamp, rec: Option<&EventRecord>| -> Result<(), String> {
        let before = m.tree().clone();
        let before_hash = before.structural_hash();
        let report = match rec {
            Some(r) => m.ingest(std::slice::from_ref(r)),
            None => m.flush_idle(now),
        }
        .map_err(|e| e.to_string())?;
        let Some(report) = report else {
            ensure(m.tree().structural_hash() == before_hash, || "tree changed without an update".into())?;
            return Ok(());
        };
        updates += 1;
        let after: HashMap<NodeId, u64> = m.tree().nodes().into_iter().map(|n| (n.id, subtree_hash(n))).collect();
        for lt in &report.levels {
            for n in before.nodes() {
                if n.level != lt.level + 1 || n.span.end >= lt.cutoff {
                    continue;
                }
                checked += 1;
                ensure(after.get(&n.id) == Some(&subtree_hash(n)), || {
                    format!("update {updates}: node {} at level {} behind the cutoff changed", n.id, n.level)
                })?;
            }
        }
        let r = m.sweep(now).map_err(|e| e.to_string())?;
        ensure(!r.interrupted, || "sweep interrupted".into())
    };

    for rec in events {
        if let Some(last) = m.ingestor().last_event() {
            let due = last + idle + Duration::from_secs(1);
            if due <= rec.at {
                step(&mut m, due, None)?;
            }
        }
        step(&mut m, rec.at, Some(rec))?;
    }
    Ok(format!("{updates} updates, {checked} frozen-node checks, 0 violations"))
}

// ---------------------------------------------------------------------------
// Service contract

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

fn skill(at: i64, s: &str) -> EventRecord {
    EventRecord::new(ts(T0 + at), EventKind::SkillStart, &[("skill", s)])
}

fn chores(from: i64, n: usize) -> Vec<EventRecord> {
    (0..n as i64)
        .flat_map(|i| {
            let at = from + i * 20;
            [skill(at, &format!("Pickup(Cup_{i})")), skill(at + 10, &format!("Navigate(Table_{i})"))]
        })
        .collect()
}

fn wait_until(what: &str, mut f: impl FnMut() -> bool) -> Result<(), String> {
    let deadline = Instant::now() + StdDuration::from_secs(20);
    while !f() {
        if Instant::now() > deadline {
            return Err(format!("timed out waiting for {what}"));
        }
        std::thread::sleep(StdDuration::from_millis(2));
    }
    Ok(())
}

fn start(backend: Arc<Gated>, config: ServiceConfig, clock: VirtualClock) -> Arc<Service> {
    let gw = Gateway::from_arc(backend);
    Arc::new(Service::start(EngineConfig::default(), config, gw, Arc::new(clock)).expect("service starts"))
}

fn scripted() -> ScriptedBackend {
    ScriptedBackend::new().grouping(GroupingBehavior::AppendToLatest).max_group(4)
}

/// Serves the API on a free port until the returned sender is dropped.
fn serve(svc: Arc<Service>) -> (String, tokio::sync::oneshot::Sender<()>, std::thread::JoinHandle<()>) {
    let addr = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let handle = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(http::serve(svc, addr, async {
            let _ = rx.await;
        }))
        .unwrap();
    });
    (format!("http://{addr}"), tx, handle)
}

fn paused_update_serves_previous_version() -> Result<String, String> {
    let gate = Gated::new(scripted(), &[PromptKind::Grouping, PromptKind::SimpleSummarize]);
    let svc = start(gate.clone(), ServiceConfig::default(), VirtualClock::new(ts(T0)));
    let (url, stop, handle) = serve(svc.clone());
    let client = reqwest::blocking::Client::new();
    wait_until("server", || client.get(format!("{url}/health")).send().is_ok())?;

    svc.ingest(chores(0, 3)).map_err(|e| e.to_string())?;
    ensure(svc.wait_idle(StdDuration::from_secs(10)), || "first update did not finish".into())?;
    let v1 = svc.latest_snapshot().version();
    gate.shut();
    svc.ingest(chores(100, 3)).map_err(|e| e.to_string())?;
    wait_until("update to block on the model", || gate.waiting.load(Ordering::SeqCst) > 0)?;
    let body = client.get(format!("{url}/tree")).send().and_then(|r| r.bytes()).map_err(|e| e.to_string())?;
    let served = read_tree(&body[..]).map_err(|e| e.to_string())?.version();
    ensure(served == v1, || format!("GET /tree served version {served} during the update, expected {v1}"))?;
    gate.release();
    ensure(svc.wait_idle(StdDuration::from_secs(10)), || "update did not finish".into())?;
    let v2 = svc.latest_snapshot().version();
    ensure(v2 > v1, || "no new version after the update".into())?;
    drop(stop);
    handle.join().map_err(|_| "server thread panicked".to_string())?;
    Ok(format!("served v{v1} while v{v1}->v{v2} was in flight"))
}

fn ingest_interrupts_sweep() -> Result<String, String> {
    let backend = scripted().relevance(RelevanceBehavior::Constant(RelevanceScore::Infinite));
    let gate = Gated::new(backend, &[PromptKind::RelevanceEstimation]);
    let clock = VirtualClock::new(ts(T0));
    let svc = start(gate.clone(), ServiceConfig::default(), clock.clone());
    svc.ingest(chores(0, 10)).map_err(|e| e.to_string())?;
    ensure(svc.wait_idle(StdDuration::from_secs(10)), || "update did not finish".into())?;
    wait_until("post-commit sweep", || !svc.sweep_reports().is_empty())?;
    let before = svc.sweep_reports().len();
    gate.shut();
    clock.advance(Duration::days(400));
    svc.request_sweep();
    wait_until("sweep to reach the model", || gate.waiting.load(Ordering::SeqCst) > 0)?;
    let calls = gate.count(PromptKind::RelevanceEstimation);
    svc.ingest(vec![skill(400 * DAY + 5, "Navigate(Sink)")]).map_err(|e| e.to_string())?;
    gate.release();
    wait_until("sweep to stop", || svc.sweep_reports().len() > before)?;
    let r = svc.sweep_reports()[before];
    ensure(r.interrupted, || format!("sweep ran to completion: {r:?}"))?;
    ensure(calls == 1 && r.lm_calls == 1, || format!("sweep made {} model calls, {calls} before the ingest", r.lm_calls))?;
    Ok("sweep stopped before its next model call".into())
}

fn counters_balance() -> Result<String, String> {
    let gate = Gated::new(scripted(), &[]);
    let svc = start(gate, ServiceConfig { batch_cap: 7, ..Default::default() }, VirtualClock::new(ts(T0)));
    let feeder = {
        let svc = svc.clone();
        std::thread::spawn(move || {
            let all = chores(0, 250);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut i = 0;
            while i < all.len() {
                let end = (i + rng.random_range(1..=16)).min(all.len());
                svc.ingest(all[i..end].to_vec()).unwrap();
                i = end;
            }
        })
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..1000 {
        let m = svc.metrics();
        ensure(m.received == m.processed + m.pending, || format!("observation {k}: {m:?}"))?;
        if rng.random_bool(0.5) {
            std::thread::yield_now();
        }
    }
    feeder.join().map_err(|_| "feeder panicked".to_string())?;
    ensure(svc.wait_idle(StdDuration::from_secs(30)), || "queue did not drain".into())?;
    let m = svc.metrics();
    ensure((m.received, m.processed, m.pending) == (500, 500, 0), || format!("final {m:?}"))?;
    Ok("1000 observations balanced".into())
}

fn service_contract() -> Check {
    let a = paused_update_serves_previous_version()?;
    let b = ingest_interrupts_sweep()?;
    let c = counters_balance()?;
    Ok(format!("{a}; {b}; {c}"))
}

// ---------------------------------------------------------------------------
// Harness-level directional checks

fn matrix(variants: &[&str]) -> Result<MatrixOutput, String> {
    let cfg = EvalConfig {
        variants: variants.iter().map(|v| v.parse::<Variant>()).collect::<Result<_, _>>().map_err(|e| format!("{e:?}"))?,
        ..EvalConfig::default()
    };
    run_matrix(&cfg).map_err(|e| e.to_string())
}

fn by_seed(out: &MatrixOutput, v: &str) -> HashMap<u64, ExperimentReport> {
    let v: Variant = v.parse().unwrap();
    out.for_variant(v).map(|r| (r.seed, r.clone())).collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn two_round_mechanism() -> Check {
    const LEARN: &str = "online-time+relevance-both";
    const STATIC: &str = "online-time+relevance-none";
    let out = matrix(&[LEARN, STATIC])?;
    let (learn, fixed) = (by_seed(&out, LEARN), by_seed(&out, STATIC));
    ensure(learn.len() == 20 && fixed.len() == 20, || "expected 20 seeds per variant".into())?;
    let mut lowered = 0;
    for (seed, r) in &learn {
        ensure(r.forgotten_ratio1 == 100.0, || format!("seed {seed}: round-1 forgotten {}%", r.forgotten_ratio1))?;
        if r.forgotten_ratio2 < 100.0 {
            lowered += 1;
        }
        let f = &fixed[seed];
        ensure(f.forgotten_ratio1 == 100.0 && f.forgotten_ratio2 == 100.0, || {
            format!("seed {seed}, no learning: {}% / {}%", f.forgotten_ratio1, f.forgotten_ratio2)
        })?;
    }
    let fr2 = mean(learn.values().map(|r| r.forgotten_ratio2));
    ensure(fr2 < 100.0, || "round 2 forgot everything".into())?;
    Ok(format!("learning: 100% -> {fr2:.1}% ({lowered}/20 seeds lower); no learning: 100% -> 100%"))
}

fn memory_reduction() -> Check {
    const FORGET: &str = "online-time+relevance-both";
    const KEEP: &str = "online-none-none";
    let out = matrix(&[FORGET, KEEP])?;
    let (f, k) = (by_seed(&out, FORGET), by_seed(&out, KEEP));
    let smaller = f.iter().filter(|(s, r)| r.n_final < k[s].n_final).count();
    let (mf, mk) = (mean(f.values().map(|r| r.n_final as f64)), mean(k.values().map(|r| r.n_final as f64)));
    let reduction = 1.0 - mf / mk;
    ensure(smaller * 100 >= 95 * f.len(), || format!("smaller in only {smaller}/{} runs", f.len()))?;
    ensure(reduction >= 0.30, || format!("mean reduction {:.1}%", reduction * 100.0))?;
    Ok(format!("N_f {mf:.1} vs {mk:.1}, -{:.1}%, smaller in {smaller}/{}", reduction * 100.0, f.len()))
}

fn query_cost() -> Check {
    let pairs = [
        ("online-time+relevance-both", "offline-time+relevance-both"),
        ("online-time+relevance-none", "offline-time+relevance-none"),
        ("online-none-none", "offline-none-none"),
    ];
    let names: Vec<&str> = pairs.iter().flat_map(|(a, b)| [*a, *b]).collect();
    let out = matrix(&names)?;
    let (mut cheaper, mut total) = (0, 0);
    let mut means = Vec::new();
    for (on, off) in pairs {
        let (a, b) = (by_seed(&out, on), by_seed(&out, off));
        for (seed, r) in &a {
            let o = &b[seed];
            ensure(o.c_qa_build > 0, || format!("{off} seed {seed}: no build cost"))?;
            total += 1;
            if r.c_qa < o.c_qa {
                cheaper += 1;
            }
        }
        means.push(format!("{:.0} vs {:.0}", mean(a.values().map(|r| r.c_qa)), mean(b.values().map(|r| r.c_qa))));
    }
    ensure(cheaper * 100 >= 90 * total, || format!("online cheaper in only {cheaper}/{total} runs"))?;
    Ok(format!("online cheaper in {cheaper}/{total} runs; C_qa {}", means.join(", ")))
}

fn determinism() -> Check {
    let cfg = EvalConfig::default();
    let a = run_matrix(&cfg).map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let b = pool.install(|| run_matrix(&cfg)).map_err(|e| e.to_string())?;
    ensure(a.runs_tsv() == b.runs_tsv(), || "runs.tsv differs".into())?;
    ensure(a.summary_tsv() == b.summary_tsv(), || "summary.tsv differs".into())?;
    ensure(a.details_jsonl() == b.details_jsonl(), || "details.jsonl differs".into())?;
    let bytes = a.runs_tsv().len() + a.summary_tsv().len() + a.details_jsonl().len();
    Ok(format!("{} runs, {bytes} bytes identical across thread counts", a.reports.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    let checks: Vec<(&str, Option<u64>, fn() -> Check)> = vec![
        ("expiration math", Some(1), expiration_math),
        ("pure-decay oracle equivalence", Some(10), pure_decay_oracle),
        ("parent dominance after every sweep", None, parent_dominance),
        ("two-round mechanism", Some(120), two_round_mechanism),
        ("memory-reduction direction", Some(300), memory_reduction),
        ("query-cost direction", None, query_cost),
        ("frontier stability", None, frontier_stability),
        ("service contract", None, service_contract),
        ("determinism", None, determinism),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, limit, f) in checks {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if secs > l as f64 => Err(format!("took {secs:.2}s, limit {l}s")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} ({secs:.2}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} ({secs:.2}s)");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
