//! Expiration times and the forgetting sweep.
//!
//! A node expires `Δt_ℓ·γ_ℓ` after its end, where `Δt_ℓ` is the lifetime of
//! its level and `γ_ℓ` doubles for every level above 3. Expired nodes get a
//! relevance estimate `α` which postpones expiry by `α·Δt_ℓ`; if that is not
//! enough the node is replaced by a placeholder.

use std::cell::RefCell;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

pub use crate::lm::parse::RelevanceScore;
use crate::lm::parse::parse_relevance;
use crate::lm::{Bindings, Gateway, LmError, PromptKind, TokenUsage};
use crate::rules::{render_rules, RuleSet};
use crate::time::{Duration, TimeSpan, Timestamp};
use crate::tree::{forget_node, node_line, merge_adjacent_placeholders, render, Audience, Child, HistoryTree, Level, NodeId, SCENE_LEVEL};

/// Lifetime per level; levels past the end reuse the last entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lifetimes(Vec<Duration>);

impl Default for Lifetimes {
    fn default() -> Self {
        Lifetimes(vec![Duration::minutes(15), Duration::HOUR, Duration::DAY])
    }
}

impl Lifetimes {
    pub fn new(per_level: Vec<Duration>) -> Self {
        assert!(!per_level.is_empty(), "at least one lifetime is required");
        Lifetimes(per_level)
    }

    pub fn of(&self, level: Level) -> Duration {
        self.0.get(level as usize).copied().unwrap_or(*self.0.last().expect("non-empty"))
    }
}

/// Level multiplier: 1 up to level 3, then doubling.
pub fn gamma(level: Level) -> i64 {
    if level <= 3 {
        1
    } else {
        1i64.checked_shl(u32::from(level) - 3).unwrap_or(i64::MAX)
    }
}

pub fn initial_expiration(level: Level, end: Timestamp, lifetimes: &Lifetimes) -> Timestamp {
    end.saturating_add(lifetimes.of(level).saturating_mul(gamma(level)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepReport {
    pub forgotten: usize,
    pub extended: usize,
    pub visited: usize,
    pub lm_calls: u32,
    pub usage: TokenUsage,
    pub interrupted: bool,
    pub budget_exhausted: bool,
}

impl SweepReport {
    pub fn changed(&self) -> bool {
        self.forgotten > 0 || self.extended > 0
    }
}

/// Tree access for the sweep. The sweep only holds access inside each
/// closure, never across a model call.
pub trait SweepTarget {
    fn read<R>(&self, f: impl FnOnce(&HistoryTree) -> R) -> R;
    fn write<R>(&self, f: impl FnOnce(&mut HistoryTree) -> R) -> R;
}

impl SweepTarget for Mutex<HistoryTree> {
    fn read<R>(&self, f: impl FnOnce(&HistoryTree) -> R) -> R {
        f(&self.lock())
    }
    fn write<R>(&self, f: impl FnOnce(&mut HistoryTree) -> R) -> R {
        f(&mut self.lock())
    }
}

/// Adapter for a tree the caller owns exclusively.
pub struct Exclusive<'a>(RefCell<&'a mut HistoryTree>);

impl<'a> Exclusive<'a> {
    pub fn new(tree: &'a mut HistoryTree) -> Self {
        Exclusive(RefCell::new(tree))
    }
}

impl SweepTarget for Exclusive<'_> {
    fn read<R>(&self, f: impl FnOnce(&HistoryTree) -> R) -> R {
        f(&self.0.borrow())
    }
    fn write<R>(&self, f: impl FnOnce(&mut HistoryTree) -> R) -> R {
        f(&mut self.0.borrow_mut())
    }
}

pub struct SweepContext<'a> {
    pub lifetimes: &'a Lifetimes,
    /// `None` means time-only forgetting: every relevance is 0.
    pub gateway: Option<&'a Gateway>,
    pub rules: &'a RuleSet,
    pub lm_call_budget: Option<u32>,
}

/// Relevance of an expired node. Unparseable replies count as 0.
pub fn estimate_relevance(
    item: &str,
    parent: &str,
    rules: &RuleSet,
    now: Timestamp,
    gateway: &Gateway,
) -> Result<(RelevanceScore, TokenUsage), LmError> {
    let bindings = Bindings::new()
        .with("rules", render_rules(rules))
        .with("item", item)
        .with("parent", parent)
        .with("now", now.format_minutes());
    let c = gateway.run(PromptKind::RelevanceEstimation, &bindings)?;
    let score = parse_relevance(&c.text).unwrap_or_else(|e| {
        tracing::warn!("relevance reply not understood ({e}); treating as 0");
        RelevanceScore::Finite(0)
    });
    Ok((score, c.usage))
}

enum Flow {
    Continue,
    Stop,
}

enum Outcome {
    Gone,
    Forgotten,
    Kept { extended: bool },
}

struct Sweeper<'a, T: SweepTarget> {
    target: &'a T,
    now: Timestamp,
    ctx: &'a SweepContext<'a>,
    interrupt: &'a dyn Fn() -> bool,
    report: SweepReport,
}

/// Walks the tree top-down, oldest sibling first, extending or forgetting
/// expired nodes and raising each surviving parent's expiration to cover its
/// children. Stops early when `interrupt` returns true (checked at every node
/// and before every model call) or the model-call budget runs out; the tree is
/// consistent at every stopping point.
pub fn sweep<T: SweepTarget>(
    target: &T,
    now: Timestamp,
    ctx: &SweepContext<'_>,
    interrupt: &dyn Fn() -> bool,
) -> Result<SweepReport, LmError> {
    let mut s = Sweeper { target, now, ctx, interrupt, report: SweepReport::default() };
    let tops: Vec<(NodeId, TimeSpan)> = target.read(|t| t.top_nodes().map(|n| (n.id, n.span)).collect());
    for (id, span) in tops {
        if let Flow::Stop = s.visit(id, span)? {
            break;
        }
    }
    Ok(s.report)
}

/// Sweep over a tree owned by the caller, with no interruption.
pub fn sweep_tree(tree: &mut HistoryTree, now: Timestamp, ctx: &SweepContext<'_>) -> Result<SweepReport, LmError> {
    sweep(&Exclusive::new(tree), now, ctx, &|| false)
}

impl<T: SweepTarget> Sweeper<'_, T> {
    fn stop_interrupted(&mut self) -> Flow {
        self.report.interrupted = true;
        Flow::Stop
    }

    fn visit(&mut self, id: NodeId, hint: TimeSpan) -> Result<Flow, LmError> {
        if (self.interrupt)() {
            return Ok(self.stop_interrupted());
        }
        let now = self.now;
        let view = self.target.read(|t| {
            let path = t.locate(id, Some(&hint))?;
            let node = t.node_at(&path)?;
            let expired = node.is_expired(now);
            let texts = expired.then(|| {
                let parent = match path.len() {
                    1 => "(top level)".to_string(),
                    n => node_line(t.node_at(&path[..n - 1]).expect("parent exists")),
                };
                (render(node, Audience::Summarizer, 1), parent)
            });
            Some((node.span, texts))
        });
        let Some((span, texts)) = view else { return Ok(Flow::Continue) };
        self.report.visited += 1;

        if let Some((item, parent)) = texts {
            let alpha = match self.ctx.gateway {
                None => RelevanceScore::Finite(0),
                Some(gw) => {
                    if (self.interrupt)() {
                        return Ok(self.stop_interrupted());
                    }
                    if self.ctx.lm_call_budget.is_some_and(|b| self.report.lm_calls >= b) {
                        self.report.budget_exhausted = true;
                        return Ok(Flow::Stop);
                    }
                    let (score, usage) = estimate_relevance(&item, &parent, self.ctx.rules, now, gw)?;
                    self.report.lm_calls += 1;
                    self.report.usage += usage;
                    score
                }
            };
            let lifetimes = self.ctx.lifetimes;
            let outcome = self.target.write(|t| {
                let Some(path) = t.locate(id, Some(&span)) else { return Outcome::Gone };
                let node = t.node_at_mut(&path).expect("located");
                let extended = match alpha {
                    RelevanceScore::Infinite => {
                        node.never_expires = true;
                        true
                    }
                    RelevanceScore::Finite(0) => false,
                    RelevanceScore::Finite(a) => {
                        node.expiration = node.expiration.saturating_add(lifetimes.of(node.level).saturating_mul(a as i64));
                        true
                    }
                };
                if !node.is_expired(now) {
                    return Outcome::Kept { extended };
                }
                let placeholder = forget_node(node);
                let idx = *path.last().expect("non-empty path");
                let container = t.container_mut(&path).expect("container exists");
                container[idx] = Child::Forgotten(placeholder);
                merge_adjacent_placeholders(container);
                Outcome::Forgotten
            });
            match outcome {
                Outcome::Gone => return Ok(Flow::Continue),
                Outcome::Forgotten => {
                    self.report.forgotten += 1;
                    return Ok(Flow::Continue);
                }
                Outcome::Kept { extended } => {
                    if extended {
                        self.report.extended += 1;
                    }
                }
            }
        }

        let kids: Vec<(NodeId, TimeSpan)> = self.target.read(|t| {
            t.locate(id, Some(&span))
                .and_then(|p| t.node_at(&p).map(|n| n.child_nodes().map(|c| (c.id, c.span)).collect()))
                .unwrap_or_default()
        });
        for (cid, cspan) in kids {
            if let Flow::Stop = self.visit(cid, cspan)? {
                return Ok(Flow::Stop);
            }
        }
        self.target.write(|t| {
            let Some(path) = t.locate(id, Some(&span)) else { return };
            let node = t.node_at_mut(&path).expect("located");
            let mut latest = node.expiration;
            let mut never = node.never_expires;
            for c in node.child_nodes() {
                latest = latest.max(c.expiration);
                never |= c.never_expires;
            }
            node.expiration = latest;
            node.never_expires = never;
        });
        Ok(Flow::Continue)
    }
}

/// 1.0 when every leaf-level entry overlapping `span` is a placeholder, 0.0
/// when at least one survives, `None` when nothing overlaps.
pub fn forgotten_ratio(tree: &HistoryTree, span: &TimeSpan) -> Option<f64> {
    fn collect(children: &[Child], span: &TimeSpan, live: &mut usize, gone: &mut usize) {
        for c in children {
            if !c.span().intersects(span) {
                continue;
            }
            match c {
                Child::Forgotten(_) => *gone += 1,
                Child::Node(n) if n.level == SCENE_LEVEL || n.children.is_empty() => *live += 1,
                Child::Node(n) => collect(&n.children, span, live, gone),
            }
        }
    }
    let (mut live, mut gone) = (0, 0);
    collect(tree.children(), span, &mut live, &mut gone);
    match (live, gone) {
        (0, 0) => None,
        (0, _) => Some(1.0),
        _ => Some(0.0),
    }
}
