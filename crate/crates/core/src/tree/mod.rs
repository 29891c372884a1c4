//! The episodic memory tree.
//!
//! Level 0 holds scene instants, level 1 events, level 2 goals and anything
//! above is an increasingly coarse summary. Forgotten subtrees are replaced in
//! their parent by a [`ForgottenPlaceholder`], so a node's children are a mix
//! of live nodes and placeholders.

mod codec;
mod placeholder;
mod render;

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{TimeSpan, Timestamp};

pub use codec::{read_tree, write_tree, CodecError, FORMAT_HEADER};
pub use placeholder::{forget_node, merge_adjacent_placeholders, SHORT_SUMMARY_MAX_CHARS};
pub use render::{entry_line, node_line, render, Audience};

pub type Level = u8;

pub const SCENE_LEVEL: Level = 0;
pub const EVENT_LEVEL: Level = 1;
pub const GOAL_LEVEL: Level = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Scene,
    Event,
    Goal,
    Higher,
}

impl NodeKind {
    pub fn for_level(level: Level) -> Self {
        match level {
            SCENE_LEVEL => NodeKind::Scene,
            EVENT_LEVEL => NodeKind::Event,
            GOAL_LEVEL => NodeKind::Goal,
            _ => NodeKind::Higher,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NodeKind::Scene => "scene",
            NodeKind::Event => "event",
            NodeKind::Goal => "goal",
            NodeKind::Higher => "summary",
        }
    }
}

/// Payload of a level-0 node: the robot's state at one instant.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneInstant {
    pub at: Timestamp,
    pub attributes: BTreeMap<String, String>,
    pub source_id: String,
}

impl SceneInstant {
    /// `action=Pickup(Knife_0); location=CounterTop`
    pub fn describe(&self) -> String {
        self.attributes
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForgottenPlaceholder {
    pub span: TimeSpan,
    pub short_summary: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Child {
    Node(TreeNode),
    Forgotten(ForgottenPlaceholder),
}

impl Child {
    pub fn span(&self) -> TimeSpan {
        match self {
            Child::Node(n) => n.span,
            Child::Forgotten(p) => p.span,
        }
    }

    pub fn as_node(&self) -> Option<&TreeNode> {
        match self {
            Child::Node(n) => Some(n),
            Child::Forgotten(_) => None,
        }
    }

    pub fn as_node_mut(&mut self) -> Option<&mut TreeNode> {
        match self {
            Child::Node(n) => Some(n),
            Child::Forgotten(_) => None,
        }
    }

    pub fn is_placeholder(&self) -> bool {
        matches!(self, Child::Forgotten(_))
    }

    pub fn first_line(&self) -> &str {
        match self {
            Child::Node(n) => n.first_line(),
            Child::Forgotten(p) => &p.short_summary,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub level: Level,
    pub span: TimeSpan,
    pub summary: String,
    pub children: Vec<Child>,
    pub expiration: Timestamp,
    #[serde(default)]
    pub never_expires: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneInstant>,
}

impl TreeNode {
    /// A node that is not attached to any tree yet; ids are assigned on
    /// adoption.
    pub fn detached(level: Level, span: TimeSpan, summary: impl Into<String>) -> Self {
        TreeNode {
            id: NodeId(0),
            level,
            span,
            summary: summary.into(),
            children: Vec::new(),
            expiration: span.end,
            never_expires: false,
            scene: None,
        }
    }

    pub fn scene(instant: SceneInstant) -> Self {
        let mut n = TreeNode::detached(SCENE_LEVEL, TimeSpan::point(instant.at), instant.describe());
        n.scene = Some(instant);
        n
    }

    pub fn kind(&self) -> NodeKind {
        NodeKind::for_level(self.level)
    }

    pub fn first_line(&self) -> &str {
        self.summary.lines().next().unwrap_or("")
    }

    pub fn is_expired(&self, now: Timestamp) -> bool {
        !self.never_expires && self.expiration < now
    }

    /// Span covering all children, if there are any.
    pub fn children_hull(&self) -> Option<TimeSpan> {
        TimeSpan::hull_all(self.children.iter().map(|c| c.span()).collect::<Vec<_>>().iter())
    }

    pub fn child_nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.children.iter().filter_map(Child::as_node)
    }

    /// Visits this node and all live descendants in pre-order.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a TreeNode)) {
        f(self);
        for c in self.child_nodes() {
            c.walk(f);
        }
    }

    pub fn count_nodes(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_| n += 1);
        n
    }
}

/// Hands out node ids; never reuses one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn starting_at(next: u64) -> Self {
        IdAllocator { next: next.max(1) }
    }

    pub fn next_id(&mut self) -> NodeId {
        let id = NodeId(self.next);
        self.next += 1;
        id
    }

    pub fn peek(&self) -> u64 {
        self.next
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryTree {
    pub(crate) children: Vec<Child>,
    pub summary: String,
    version: u64,
    max_depth: u8,
    pub(crate) ids: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InvariantViolation {
    #[error("node {0}: span does not match its children")]
    SpanNesting(NodeId),
    #[error("children of {0} are out of order or overlap")]
    ChildOrder(String),
    #[error("node {child} at level {child_level} under a level-{parent_level} parent")]
    LevelDiscipline { child: NodeId, child_level: Level, parent_level: Level },
    #[error("adjacent placeholders under {0}")]
    AdjacentPlaceholders(String),
    #[error("placeholder summary spans several lines under {0}")]
    MultilinePlaceholder(String),
    #[error("scene node {0} has children")]
    SceneWithChildren(NodeId),
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("parent {parent} expires before child {child}")]
    ParentDominance { parent: NodeId, child: NodeId },
}

impl HistoryTree {
    pub fn new(max_depth: u8) -> Self {
        assert!(max_depth >= 1, "a tree needs at least one level");
        HistoryTree {
            children: Vec::new(),
            summary: String::new(),
            version: 0,
            max_depth,
            ids: 1,
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Marks the tree as a new published state.
    pub fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn max_depth(&self) -> u8 {
        self.max_depth
    }

    /// Level of the nodes directly below the root.
    pub fn top_level(&self) -> Level {
        self.max_depth - 1
    }

    pub fn children(&self) -> &[Child] {
        &self.children
    }

    pub fn children_mut(&mut self) -> &mut Vec<Child> {
        &mut self.children
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn id_allocator(&self) -> IdAllocator {
        IdAllocator::starting_at(self.ids)
    }

    pub fn store_id_allocator(&mut self, ids: IdAllocator) {
        self.ids = self.ids.max(ids.peek());
    }

    pub fn next_id(&mut self) -> NodeId {
        let mut a = self.id_allocator();
        let id = a.next_id();
        self.store_id_allocator(a);
        id
    }

    /// Assigns fresh ids to every node in `node`'s subtree.
    pub fn adopt(&mut self, node: &mut TreeNode) {
        let mut ids = self.id_allocator();
        assign_ids(node, &mut ids);
        self.store_id_allocator(ids);
    }

    /// Appends a node directly under the root. Used by the offline builders
    /// and tests; online updates go through the builder.
    pub fn push_top(&mut self, child: Child) {
        self.children.push(child);
    }

    pub fn span(&self) -> Option<TimeSpan> {
        TimeSpan::hull_all(self.children.iter().map(|c| c.span()).collect::<Vec<_>>().iter())
    }

    pub fn latest_end(&self) -> Option<Timestamp> {
        self.span().map(|s| s.end)
    }

    pub fn top_nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.children.iter().filter_map(Child::as_node)
    }

    /// All live nodes in pre-order.
    pub fn nodes(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        for n in self.top_nodes() {
            n.walk(&mut |x| out.push(x));
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.top_nodes().map(TreeNode::count_nodes).sum()
    }

    pub fn count_at_or_above(&self, level: Level) -> usize {
        self.nodes().iter().filter(|n| n.level >= level).count()
    }

    pub fn placeholder_count(&self) -> usize {
        fn count(children: &[Child]) -> usize {
            children
                .iter()
                .map(|c| match c {
                    Child::Forgotten(_) => 1,
                    Child::Node(n) => count(&n.children),
                })
                .sum()
        }
        count(&self.children)
    }

    pub fn find(&self, id: NodeId) -> Option<&TreeNode> {
        let path = self.locate(id, None)?;
        self.node_at(&path)
    }

    pub fn find_mut(&mut self, id: NodeId) -> Option<&mut TreeNode> {
        let path = self.locate(id, None)?;
        self.node_at_mut(&path)
    }

    /// Index path from the root to `id`. With a span hint the search only
    /// descends into subtrees whose span covers the hint, falling back to a
    /// full search if that fails (e.g. after a concurrent restructure).
    pub fn locate(&self, id: NodeId, hint: Option<&TimeSpan>) -> Option<Vec<usize>> {
        fn search(children: &[Child], id: NodeId, hint: Option<&TimeSpan>, path: &mut Vec<usize>) -> bool {
            for (i, c) in children.iter().enumerate() {
                let Child::Node(n) = c else { continue };
                if let Some(h) = hint {
                    if !n.span.contains_span(h) {
                        continue;
                    }
                }
                path.push(i);
                if n.id == id || search(&n.children, id, hint, path) {
                    return true;
                }
                path.pop();
            }
            false
        }
        let mut path = Vec::new();
        if hint.is_some() && search(&self.children, id, hint, &mut path) {
            return Some(path);
        }
        path.clear();
        search(&self.children, id, None, &mut path).then_some(path)
    }

    pub fn node_at(&self, path: &[usize]) -> Option<&TreeNode> {
        let (first, rest) = path.split_first()?;
        let mut node = self.children.get(*first)?.as_node()?;
        for i in rest {
            node = node.children.get(*i)?.as_node()?;
        }
        Some(node)
    }

    pub fn node_at_mut(&mut self, path: &[usize]) -> Option<&mut TreeNode> {
        let (first, rest) = path.split_first()?;
        let mut node = self.children.get_mut(*first)?.as_node_mut()?;
        for i in rest {
            node = node.children.get_mut(*i)?.as_node_mut()?;
        }
        Some(node)
    }

    /// Children list that holds the entry at `path`.
    pub fn container_mut(&mut self, path: &[usize]) -> Option<&mut Vec<Child>> {
        match path.split_last() {
            None => None,
            Some((_, [])) => Some(&mut self.children),
            Some((_, parent)) => self.node_at_mut(parent).map(|n| &mut n.children),
        }
    }

    /// Hash over content, structure and version. Stable across processes.
    pub fn structural_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.children.hash(&mut h);
        self.summary.hash(&mut h);
        self.version.hash(&mut h);
        self.max_depth.hash(&mut h);
        h.finish()
    }

    /// Checks the structural invariants that hold at all times.
    pub fn validate(&self) -> Result<(), InvariantViolation> {
        let mut seen = std::collections::HashSet::new();
        check_children(&self.children, "root", None, &mut seen)?;
        for n in self.top_nodes() {
            if n.level > self.top_level() {
                return Err(InvariantViolation::LevelDiscipline {
                    child: n.id,
                    child_level: n.level,
                    parent_level: self.max_depth,
                });
            }
        }
        Ok(())
    }

    /// Every parent expires no earlier than each of its children. Holds
    /// after a completed sweep.
    pub fn check_parent_dominance(&self) -> Result<(), InvariantViolation> {
        fn check(n: &TreeNode) -> Result<(), InvariantViolation> {
            for c in n.child_nodes() {
                let dominated = n.never_expires || (!c.never_expires && n.expiration >= c.expiration);
                if !dominated {
                    return Err(InvariantViolation::ParentDominance { parent: n.id, child: c.id });
                }
                check(c)?;
            }
            Ok(())
        }
        self.top_nodes().try_for_each(check)
    }

    pub(crate) fn set_version(&mut self, v: u64) {
        self.version = v;
    }
}

fn assign_ids(node: &mut TreeNode, ids: &mut IdAllocator) {
    node.id = ids.next_id();
    for c in node.children.iter_mut() {
        if let Child::Node(n) = c {
            assign_ids(n, ids);
        }
    }
}

fn check_children(
    children: &[Child],
    owner: &str,
    parent_level: Option<Level>,
    seen: &mut std::collections::HashSet<NodeId>,
) -> Result<(), InvariantViolation> {
    for pair in children.windows(2) {
        let (a, b) = (pair[0].span(), pair[1].span());
        if a.start > b.start || a.end > b.start {
            return Err(InvariantViolation::ChildOrder(owner.to_string()));
        }
        if pair[0].is_placeholder() && pair[1].is_placeholder() {
            return Err(InvariantViolation::AdjacentPlaceholders(owner.to_string()));
        }
    }
    for c in children {
        match c {
            Child::Forgotten(p) => {
                if p.short_summary.contains('\n') {
                    return Err(InvariantViolation::MultilinePlaceholder(owner.to_string()));
                }
            }
            Child::Node(n) => {
                if !seen.insert(n.id) {
                    return Err(InvariantViolation::DuplicateId(n.id));
                }
                if let Some(pl) = parent_level {
                    if n.level + 1 != pl {
                        return Err(InvariantViolation::LevelDiscipline {
                            child: n.id,
                            child_level: n.level,
                            parent_level: pl,
                        });
                    }
                }
                if n.level == SCENE_LEVEL && !n.children.is_empty() {
                    return Err(InvariantViolation::SceneWithChildren(n.id));
                }
                if let Some(h) = n.children_hull() {
                    if h != n.span {
                        return Err(InvariantViolation::SpanNesting(n.id));
                    }
                }
                check_children(&n.children, &n.id.to_string(), Some(n.level), seen)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::time::Duration;

    /// Balanced tree where every node has `fanout` children, leaves one
    /// minute apart starting at `t0`.
    pub fn balanced(depth: u8, fanout: usize, t0: Timestamp) -> HistoryTree {
        fn build(level: Level, fanout: usize, t: &mut Timestamp) -> TreeNode {
            if level == 0 {
                let n = TreeNode::detached(0, TimeSpan::point(*t), format!("leaf at {}", t.secs()));
                *t += Duration::MINUTE;
                return n;
            }
            let children: Vec<Child> = (0..fanout).map(|_| Child::Node(build(level - 1, fanout, t))).collect();
            let span = TimeSpan::hull_all(children.iter().map(|c| c.span()).collect::<Vec<_>>().iter()).unwrap();
            let mut n = TreeNode::detached(level, span, format!("level {level} node"));
            n.children = children;
            n
        }
        let mut tree = HistoryTree::new(depth);
        let mut t = t0;
        for _ in 0..fanout {
            let mut n = build(depth - 1, fanout, &mut t);
            tree.adopt(&mut n);
            tree.push_top(Child::Node(n));
        }
        tree
    }
}
