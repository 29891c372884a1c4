//! History tree construction: the incremental online update, an offline
//! builder that processes a whole recording at once, and the rule-based
//! derivation of event and goal nodes from scene streams.

mod cluster;
mod derive;
mod grouping;
mod offline;
mod update;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forgetting::{initial_expiration, Lifetimes};
use crate::lm::parse::parse_summary;
use crate::lm::{Bindings, Gateway, LmError, PromptKind, TokenUsage};
use crate::rules::RuleSet;
use crate::time::{TimeSpan, Timestamp};
use crate::tree::{entry_line, Audience, Child, Level, TreeNode};

pub use cluster::{gaps, median, time_based_cluster};
pub use derive::{action_name, DeriveConfig, LowLevelDeriver, SPEECH_KEY};
pub use grouping::{group_and_summarize, validate_directives, Grouped};
pub use offline::{build_flat, build_offline, OfflineBuild};
pub use update::{frontier_violations, update_tree, LevelTrace, UpdateReport};

#[cfg(test)]
mod tests;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuilderConfig {
    /// Number of levels including scenes; nodes under the root sit at
    /// `max_depth - 1`.
    pub max_depth: u8,
    pub lifetimes: Lifetimes,
    /// `G`: a gap longer than this many median gaps starts a new cluster.
    pub cluster_gap_factor: f64,
    /// `K`: parents ending more than `K` parent lifetimes before the new
    /// items are frozen.
    pub visibility_window: i64,
    /// `M`: inserting into the latest parent is refused if its span would
    /// grow beyond `M` median parent spans.
    pub push_prevention_factor: f64,
    pub prevent_push: bool,
    /// Items per grouping call in the offline builder.
    pub offline_chunk: usize,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        BuilderConfig {
            max_depth: 8,
            lifetimes: Lifetimes::default(),
            cluster_gap_factor: 10.0,
            visibility_window: 3,
            push_prevention_factor: 5.0,
            prevent_push: true,
            offline_chunk: 20,
        }
    }
}

impl BuilderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_depth < 3 {
            return Err(format!("max_depth must be at least 3, got {}", self.max_depth));
        }
        if self.cluster_gap_factor <= 0.0 || self.push_prevention_factor <= 0.0 {
            return Err("cluster and push-prevention factors must be positive".into());
        }
        if self.visibility_window < 0 {
            return Err("visibility window must not be negative".into());
        }
        if self.offline_chunk < 2 {
            return Err("offline chunk must hold at least two items".into());
        }
        Ok(())
    }
}

/// Everything an update needs besides the tree.
#[derive(Clone, Copy)]
pub struct BuildContext<'a> {
    pub config: &'a BuilderConfig,
    pub gateway: &'a Gateway,
    pub rules: &'a RuleSet,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BuildError {
    #[error("batch starts at {batch_start} but the tree already reaches {tree_end}")]
    OutOfOrder { batch_start: Timestamp, tree_end: Timestamp },
    #[error("batch items overlap or are not sorted by time")]
    UnsortedBatch,
    #[error("batch mixes levels {0} and {1}")]
    MixedLevels(Level, Level),
    #[error("batch level {level} is above the top level {top}")]
    LevelTooHigh { level: Level, top: Level },
    #[error("tree structure does not allow an update: {0}")]
    Structure(String),
    #[error(transparent)]
    Lm(#[from] LmError),
}

/// Calls and tokens spent by one construction step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spend {
    pub calls: u32,
    pub usage: TokenUsage,
}

impl Spend {
    fn add(&mut self, usage: TokenUsage) {
        self.calls += 1;
        self.usage += usage;
    }
}

impl std::ops::AddAssign for Spend {
    fn add_assign(&mut self, rhs: Spend) {
        self.calls += rhs.calls;
        self.usage += rhs.usage;
    }
}

pub(crate) fn hull_of(children: &[Child]) -> Option<TimeSpan> {
    TimeSpan::hull_all(children.iter().map(Child::span).collect::<Vec<_>>().iter())
}

/// Span from the children; expiration no earlier than the level default for
/// the new end or any child's. Retention flags propagate upward.
pub(crate) fn refresh_parent(node: &mut TreeNode, lifetimes: &Lifetimes) {
    if let Some(h) = hull_of(&node.children) {
        node.span = h;
    }
    let mut tau = node.expiration.max(initial_expiration(node.level, node.span.end, lifetimes));
    let mut never = node.never_expires;
    for c in node.child_nodes() {
        tau = tau.max(c.expiration);
        never |= c.never_expires;
    }
    node.expiration = tau;
    node.never_expires = never;
}

/// Initial expirations for a freshly built subtree, bottom-up.
pub(crate) fn settle_new(node: &mut TreeNode, lifetimes: &Lifetimes) {
    for c in node.children.iter_mut() {
        if let Child::Node(n) = c {
            settle_new(n, lifetimes);
        }
    }
    node.expiration = initial_expiration(node.level, node.span.end, lifetimes);
    refresh_parent(node, lifetimes);
}

/// One- or two-sentence summary of some entries. Unparseable replies fall
/// back to the entries' first lines.
pub(crate) fn simple_summarize(children: &[Child], gateway: &Gateway, spend: &mut Spend) -> Result<String, LmError> {
    let lines: Vec<String> = children
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}: {}", i + 1, entry_line(c, Audience::Summarizer)))
        .collect();
    let c = gateway.run(PromptKind::SimpleSummarize, &Bindings::new().with("items", lines.join("\n")))?;
    spend.add(c.usage);
    Ok(parse_summary(&c.text).unwrap_or_else(|e| {
        tracing::warn!("summary reply not understood ({e}); joining first lines");
        joined_first_lines(children)
    }))
}

pub(crate) fn joined_first_lines(children: &[Child]) -> String {
    let s = children.iter().map(Child::first_line).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; ");
    crate::text::truncate_chars(&s, 400).to_string()
}
