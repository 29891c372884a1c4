//! Single-owner memory pipeline: records in, goals derived, tree updated,
//! swept and queried. The service wraps one of these behind its locks; the
//! evaluation harness and the CLI replay drive it directly.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{answer_question, QaResult};
use crate::builder::{update_tree, BuildContext, BuildError, DeriveConfig, LowLevelDeriver, UpdateReport};
use crate::config::EngineConfig;
use crate::events::{EventError, EventRecord, SceneAssembler};
use crate::forgetting::{sweep, Exclusive, SweepContext, SweepReport};
use crate::lm::{Gateway, LmError};
use crate::rules::{RuleSet, RuleStore, RulesError};
use crate::time::Timestamp;
use crate::tree::{HistoryTree, TreeNode};

/// Records to scenes to closed goal nodes.
#[derive(Clone, Debug, Default)]
pub struct Ingestor {
    assembler: SceneAssembler,
    deriver: LowLevelDeriver,
    last: Option<Timestamp>,
}

impl Ingestor {
    pub fn new(config: DeriveConfig) -> Self {
        Ingestor { assembler: SceneAssembler::new(), deriver: LowLevelDeriver::new(config), last: None }
    }

    pub fn last_event(&self) -> Option<Timestamp> {
        self.last
    }

    /// Checks a record against the ones already taken.
    pub fn admit(&self, rec: &EventRecord) -> Result<(), EventError> {
        rec.validate()?;
        match self.last {
            Some(last) if rec.at < last => Err(EventError::OutOfOrder { at: rec.at, last }),
            _ => Ok(()),
        }
    }

    pub fn push(&mut self, rec: &EventRecord) -> Result<Vec<TreeNode>, EventError> {
        self.admit(rec)?;
        self.last = Some(rec.at);
        Ok(match self.assembler.push(rec) {
            Some(scene) => self.deriver.push(scene),
            None => Vec::new(),
        })
    }

    pub fn flush_idle(&mut self, now: Timestamp) -> Vec<TreeNode> {
        self.deriver.flush_idle(now)
    }

    pub fn flush(&mut self) -> Vec<TreeNode> {
        self.deriver.flush()
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Rules(#[from] RulesError),
}

/// Which stages see the learned rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleUse {
    pub building: bool,
    pub forgetting: bool,
}

impl Default for RuleUse {
    fn default() -> Self {
        RuleUse { building: true, forgetting: true }
    }
}

pub struct Memory {
    config: EngineConfig,
    tree: HistoryTree,
    ingestor: Ingestor,
    rules: Arc<RuleStore>,
    gateway: Gateway,
    rule_use: RuleUse,
}

impl Memory {
    pub fn new(config: EngineConfig, gateway: Gateway) -> Self {
        let rules = Arc::new(RuleStore::new(RuleSet::seeded(config.rules.iter().cloned())));
        Memory {
            tree: HistoryTree::new(config.builder.max_depth),
            ingestor: Ingestor::new(config.derive.clone()),
            rules,
            gateway,
            config,
            rule_use: RuleUse::default(),
        }
    }

    /// Continues from a stored tree. Events older than its newest node are
    /// rejected by the next update.
    pub fn with_tree(mut self, tree: HistoryTree) -> Self {
        self.tree = tree;
        self
    }

    pub fn with_rule_use(mut self, rule_use: RuleUse) -> Self {
        self.rule_use = rule_use;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn tree(&self) -> &HistoryTree {
        &self.tree
    }

    pub fn rules(&self) -> &Arc<RuleStore> {
        &self.rules
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn ingestor(&self) -> &Ingestor {
        &self.ingestor
    }

    fn stage_rules(&self, used: bool) -> Arc<RuleSet> {
        if used {
            self.rules.pin()
        } else {
            Arc::new(RuleSet::new())
        }
    }

    /// Derives goals from `records` and merges the closed ones into the tree.
    /// Records up to a bad one are kept; the error is returned after the
    /// goals derived so far are merged.
    pub fn ingest(&mut self, records: &[EventRecord]) -> Result<Option<UpdateReport>, EngineError> {
        let mut goals = Vec::new();
        let mut bad = None;
        for r in records {
            match self.ingestor.push(r) {
                Ok(g) => goals.extend(g),
                Err(e) => {
                    bad = Some(e);
                    break;
                }
            }
        }
        let report = self.commit(goals)?;
        match bad {
            Some(e) => Err(e.into()),
            None => Ok(report),
        }
    }

    /// Closes a goal that has been idle for longer than the idle gap.
    pub fn flush_idle(&mut self, now: Timestamp) -> Result<Option<UpdateReport>, EngineError> {
        let goals = self.ingestor.flush_idle(now);
        self.commit(goals)
    }

    pub fn flush(&mut self) -> Result<Option<UpdateReport>, EngineError> {
        let goals = self.ingestor.flush();
        self.commit(goals)
    }

    /// Merges already derived goal (or other) nodes.
    pub fn commit(&mut self, nodes: Vec<TreeNode>) -> Result<Option<UpdateReport>, EngineError> {
        if nodes.is_empty() {
            return Ok(None);
        }
        let rules = self.stage_rules(self.rule_use.building);
        let ctx = BuildContext { config: &self.config.builder, gateway: &self.gateway, rules: &rules };
        Ok(Some(update_tree(&mut self.tree, nodes, &ctx)?))
    }

    pub fn sweep(&mut self, now: Timestamp) -> Result<SweepReport, LmError> {
        self.sweep_interruptible(now, &|| false)
    }

    /// One forgetting pass; a pass that changed anything publishes a new
    /// version.
    pub fn sweep_interruptible(&mut self, now: Timestamp, interrupt: &dyn Fn() -> bool) -> Result<SweepReport, LmError> {
        let f = &self.config.forgetting;
        if !f.enabled {
            return Ok(SweepReport::default());
        }
        let rules = self.stage_rules(self.rule_use.forgetting);
        let ctx = SweepContext {
            lifetimes: &self.config.builder.lifetimes,
            gateway: f.relevance.then_some(&self.gateway),
            rules: &rules,
            lm_call_budget: f.lm_call_budget,
        };
        let report = sweep(&Exclusive::new(&mut self.tree), now, &ctx, interrupt)?;
        if report.changed() {
            self.tree.bump_version();
        }
        Ok(report)
    }

    pub fn ask(&self, question: &str, now: Timestamp) -> Result<QaResult, LmError> {
        answer_question(&self.tree, question, now, self.config.exploration, &self.gateway, &self.config.agent)
    }

    /// Returns the new rules version.
    pub fn feedback(&self, text: &str, now: Timestamp) -> Result<u64, RulesError> {
        let (rules, _) = self.rules.learn(text, &self.gateway, now)?;
        Ok(rules.version())
    }
}
