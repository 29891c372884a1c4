//! Replays one history through one variant, pausing at question times.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use emtree_core::agent::{answer_question, ExplorationMode, QaResult};
use emtree_core::builder::{build_offline, BuildContext, BuildError};
use emtree_core::config::EngineConfig;
use emtree_core::engine::{EngineError, Ingestor, Memory};
use emtree_core::events::EventRecord;
use emtree_core::forgetting::{forgotten_ratio, sweep_tree, SweepContext};
use emtree_core::lm::{Gateway, LmError, PromptKind};
use emtree_core::rules::{RuleSet, RuleStore, RulesError};
use emtree_core::time::{Duration, Timestamp};
use emtree_core::tree::{HistoryTree, TreeNode, GOAL_LEVEL};

use crate::judge::{judge, Grade};
use crate::qa::{QaPair, Question};
use crate::report::ExperimentReport;
use crate::variant::{Construction, Forgetting, Variant};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid variant: {0}")]
    Variant(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error("tree invariant broken after {stage} at {at}: {detail}")]
    Invariant { stage: &'static str, at: Timestamp, detail: String },
}

/// One asked question, for the detail log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionDetail {
    pub variant: Variant,
    pub seed: u64,
    pub pair: String,
    pub round: u8,
    pub ask_at: Timestamp,
    pub question: String,
    pub ground_truth: String,
    pub answer: String,
    pub grade: Grade,
    /// `None` when no leaf overlaps the target span.
    pub forgotten: Option<bool>,
    pub qa_tokens: u64,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub details: Vec<QuestionDetail>,
    /// Tree state after the final sweep.
    pub final_tree: HistoryTree,
}

/// The engine configuration a variant runs with.
pub fn variant_config(base: &EngineConfig, variant: Variant) -> EngineConfig {
    let mut c = base.clone();
    c.forgetting.enabled = variant.forgetting != Forgetting::None;
    c.forgetting.relevance = variant.forgetting == Forgetting::TimeRelevance;
    c.exploration = ExplorationMode::Tree;
    if variant.construction == Construction::Flat {
        c.builder.max_depth = GOAL_LEVEL + 1;
        c.exploration = ExplorationMode::Flat;
    }
    c
}

fn check(tree: &HistoryTree, stage: &'static str, at: Timestamp) -> Result<(), RunError> {
    tree.validate()
        .and_then(|_| tree.check_parent_dominance())
        .map_err(|e| RunError::Invariant { stage, at, detail: e.to_string() })
}

/// Online and flat variants keep a live tree; offline ones rebuild from all
/// goals at each question.
enum Pipeline {
    Live(Memory),
    Offline(OfflineState),
}

struct OfflineState {
    config: EngineConfig,
    variant: Variant,
    gateway: Gateway,
    ingestor: Ingestor,
    goals: Vec<TreeNode>,
    rules: Arc<RuleStore>,
    tree: HistoryTree,
    build_tokens: u64,
}

impl OfflineState {
    fn take(&mut self, goals: Vec<TreeNode>) {
        self.goals.extend(goals);
    }

    fn rules_for(&self, used: bool) -> Arc<RuleSet> {
        if used {
            self.rules.pin()
        } else {
            Arc::new(RuleSet::new())
        }
    }

    /// Builds the tree over everything seen so far, then forgets what has
    /// expired by `now`.
    fn rebuild(&mut self, now: Timestamp) -> Result<(), RunError> {
        let use_ = self.variant.rule_use();
        let rules = self.rules_for(use_.building);
        let ctx = BuildContext { config: &self.config.builder, gateway: &self.gateway, rules: &rules };
        let built = build_offline(self.goals.clone(), &ctx)?;
        self.build_tokens += built.spend.usage.total();
        self.tree = built.tree;
        if self.config.forgetting.enabled {
            let rules = self.rules_for(use_.forgetting);
            let sctx = SweepContext {
                lifetimes: &self.config.builder.lifetimes,
                gateway: self.config.forgetting.relevance.then_some(&self.gateway),
                rules: &rules,
                lm_call_budget: self.config.forgetting.lm_call_budget,
            };
            sweep_tree(&mut self.tree, now, &sctx)?;
        }
        Ok(())
    }
}

impl Pipeline {
    fn new(config: EngineConfig, variant: Variant, gateway: Gateway) -> Pipeline {
        match variant.construction {
            Construction::Offline => Pipeline::Offline(OfflineState {
                ingestor: Ingestor::new(config.derive.clone()),
                rules: Arc::new(RuleStore::new(RuleSet::seeded(config.rules.iter().cloned()))),
                tree: HistoryTree::new(config.builder.max_depth),
                goals: Vec::new(),
                build_tokens: 0,
                config,
                variant,
                gateway,
            }),
            _ => Pipeline::Live(Memory::new(config, gateway).with_rule_use(variant.rule_use())),
        }
    }

    /// Offline trees exist only at question time, so their size is sampled
    /// there instead of after every record.
    fn is_live(&self) -> bool {
        matches!(self, Pipeline::Live(_))
    }

    fn tree(&self) -> &HistoryTree {
        match self {
            Pipeline::Live(m) => m.tree(),
            Pipeline::Offline(o) => &o.tree,
        }
    }

    fn last_event(&self) -> Option<Timestamp> {
        match self {
            Pipeline::Live(m) => m.ingestor().last_event(),
            Pipeline::Offline(o) => o.ingestor.last_event(),
        }
    }

    fn idle_gap(&self) -> Duration {
        match self {
            Pipeline::Live(m) => m.config().derive.idle_gap,
            Pipeline::Offline(o) => o.config.derive.idle_gap,
        }
    }

    /// Merges new goals and sweeps right after, as the service does when
    /// its queue runs empty.
    fn settle(&mut self, committed: bool, at: Timestamp) -> Result<(), RunError> {
        if let Pipeline::Live(m) = self {
            if committed {
                check(m.tree(), "update", at)?;
                m.sweep(at)?;
                check(m.tree(), "sweep", at)?;
            }
        }
        Ok(())
    }

    /// Closes a goal that went idle before `until`, at the moment it would
    /// have timed out.
    fn flush_idle_before(&mut self, until: Timestamp) -> Result<(), RunError> {
        let Some(last) = self.last_event() else { return Ok(()) };
        let due = last + self.idle_gap() + Duration::SECOND;
        if due > until {
            return Ok(());
        }
        let committed = match self {
            Pipeline::Live(m) => m.flush_idle(due)?.is_some(),
            Pipeline::Offline(o) => {
                let goals = o.ingestor.flush_idle(due);
                o.take(goals);
                false
            }
        };
        self.settle(committed, due)
    }

    fn ingest(&mut self, rec: &EventRecord) -> Result<(), RunError> {
        self.flush_idle_before(rec.at)?;
        let committed = match self {
            Pipeline::Live(m) => m.ingest(std::slice::from_ref(rec))?.is_some_and(|r| r.committed),
            Pipeline::Offline(o) => {
                let goals = o.ingestor.push(rec).map_err(EngineError::from)?;
                o.take(goals);
                false
            }
        };
        self.settle(committed, rec.at)
    }

    /// Brings the tree up to date for a question at `now`.
    fn prepare(&mut self, now: Timestamp) -> Result<(), RunError> {
        self.flush_idle_before(now)?;
        match self {
            Pipeline::Live(m) => {
                m.sweep(now)?;
                check(m.tree(), "sweep", now)
            }
            Pipeline::Offline(o) => {
                o.rebuild(now)?;
                check(&o.tree, "offline build", now)
            }
        }
    }

    fn ask(&self, question: &str, now: Timestamp) -> Result<QaResult, LmError> {
        match self {
            Pipeline::Live(m) => m.ask(question, now),
            Pipeline::Offline(o) => answer_question(
                &o.tree,
                question,
                now,
                o.config.exploration,
                &o.gateway,
                &o.config.agent,
            ),
        }
    }

    fn feedback(&self, text: &str, now: Timestamp) -> Result<(), RunError> {
        match self {
            Pipeline::Live(m) => m.feedback(text, now).map(|_| ())?,
            Pipeline::Offline(o) => o.rules.learn(text, &o.gateway, now).map(|_| ())?,
        }
        Ok(())
    }

    fn finish(&mut self, end: Timestamp) -> Result<(), RunError> {
        match self {
            Pipeline::Live(m) => {
                let committed = m.flush()?.is_some();
                if committed {
                    check(m.tree(), "update", end)?;
                }
                m.sweep(end)?;
                check(m.tree(), "sweep", end)
            }
            Pipeline::Offline(o) => {
                let goals = o.ingestor.flush();
                o.take(goals);
                o.rebuild(end)?;
                check(&o.tree, "offline build", end)
            }
        }
    }

    fn build_tokens(&self) -> u64 {
        match self {
            Pipeline::Live(_) => 0,
            Pipeline::Offline(o) => o.build_tokens,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Ask {
    at: Timestamp,
    round: u8,
    pair: usize,
}

/// Replays `events`, answering each pair's questions at their ask times and
/// giving the pair's feedback right after every round-one answer (unless
/// the variant does not learn). `gateway` should carry a fresh ledger; the
/// judge uses its own.
pub fn run_experiment(
    variant: Variant,
    events: &[EventRecord],
    pairs: &[QaPair],
    base: &EngineConfig,
    gateway: &Gateway,
    judge_gateway: &Gateway,
) -> Result<RunOutput, RunError> {
    variant.validate().map_err(RunError::Variant)?;
    let config = variant_config(base, variant);
    let mut pipe = Pipeline::new(config, variant, gateway.clone());

    let mut asks: Vec<Ask> = pairs
        .iter()
        .enumerate()
        .flat_map(|(i, p)| [Ask { at: p.round1.ask_at, round: 1, pair: i }, Ask { at: p.round2.ask_at, round: 2, pair: i }])
        .collect();
    asks.sort();

    let mut sizes: Vec<usize> = Vec::new();
    let mut details: Vec<QuestionDetail> = Vec::new();
    let mut qa_tokens = 0u64;
    let mut next_event = 0;

    for ask in &asks {
        while next_event < events.len() && events[next_event].at <= ask.at {
            pipe.ingest(&events[next_event])?;
            if pipe.is_live() {
                sizes.push(pipe.tree().count_at_or_above(GOAL_LEVEL));
            }
            next_event += 1;
        }
        let pair = &pairs[ask.pair];
        let q: &Question = if ask.round == 1 { &pair.round1 } else { &pair.round2 };
        pipe.prepare(ask.at)?;
        if !pipe.is_live() {
            sizes.push(pipe.tree().count_at_or_above(GOAL_LEVEL));
        }
        let forgotten = forgotten_ratio(pipe.tree(), &q.target_span).map(|r| r >= 1.0);
        let result = pipe.ask(&q.text, ask.at)?;
        qa_tokens += result.usage.total();
        let grade = judge(&q.text, &q.ground_truth, &result, judge_gateway);
        details.push(QuestionDetail {
            variant,
            seed: 0,
            pair: pair.id.clone(),
            round: ask.round,
            ask_at: ask.at,
            question: q.text.clone(),
            ground_truth: q.ground_truth.clone(),
            answer: result.answer.clone(),
            grade,
            forgotten,
            qa_tokens: result.usage.total(),
            steps: result.trace.len(),
        });
        if ask.round == 1 && variant.learns() {
            pipe.feedback(&pair.feedback, ask.at)?;
        }
    }
    for e in &events[next_event..] {
        pipe.ingest(e)?;
        if pipe.is_live() {
            sizes.push(pipe.tree().count_at_or_above(GOAL_LEVEL));
        }
    }
    let end = [events.last().map(|e| e.at), asks.last().map(|a| a.at)].into_iter().flatten().max();
    if let Some(end) = end {
        pipe.finish(end)?;
    }
    let final_tree = pipe.tree().clone();
    let n_final = final_tree.count_at_or_above(GOAL_LEVEL);
    sizes.push(n_final);

    let ledger = gateway.ledger();
    let report = ExperimentReport::aggregate(
        variant,
        pairs,
        &details,
        &sizes,
        n_final,
        qa_tokens + pipe.build_tokens(),
        pipe.build_tokens(),
        ledger.get(PromptKind::RelevanceEstimation).total(),
    );
    debug_assert_eq!(qa_tokens, ledger.get(PromptKind::QaAgent).total());
    Ok(RunOutput { report, details, final_tree })
}
