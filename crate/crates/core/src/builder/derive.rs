//! Rule-based event and goal nodes for scene streams.
//!
//! An event starts whenever a scene differs from the previous one in any
//! attribute other than speech, or carries speech. A goal collects events
//! and closes once an event with an interaction action is over, after an
//! idle gap, or on an explicit flush.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::time::{Duration, TimeSpan, Timestamp};
use crate::tree::{Child, SceneInstant, TreeNode, EVENT_LEVEL, GOAL_LEVEL};

pub const SPEECH_KEY: &str = "speech";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeriveConfig {
    /// Action names (without arguments) that finish a goal.
    pub interaction_actions: BTreeSet<String>,
    /// A pause longer than this closes the open goal.
    pub idle_gap: Duration,
}

impl Default for DeriveConfig {
    fn default() -> Self {
        let actions = [
            "Pickup", "Place", "Put", "Open", "Close", "ToggleOn", "ToggleOff", "Slice", "Pour", "Clean", "Cook",
            "Fill", "Empty", "Handover", "Grasp",
        ];
        DeriveConfig {
            interaction_actions: actions.iter().map(|s| s.to_string()).collect(),
            idle_gap: Duration::minutes(10),
        }
    }
}

/// `Pickup` for `Pickup(Knife_0)`.
pub fn action_name(action: &str) -> &str {
    action.split('(').next().unwrap_or(action).trim()
}

#[derive(Clone, Debug, Default)]
pub struct LowLevelDeriver {
    config: DeriveConfig,
    event: Vec<TreeNode>,
    goal: Vec<TreeNode>,
    last: Option<SceneInstant>,
}

fn without_speech(a: &BTreeMap<String, String>) -> impl Iterator<Item = (&String, &String)> {
    a.iter().filter(|(k, _)| k.as_str() != SPEECH_KEY)
}

impl LowLevelDeriver {
    pub fn new(config: DeriveConfig) -> Self {
        LowLevelDeriver { config, ..Default::default() }
    }

    pub fn last_seen(&self) -> Option<Timestamp> {
        self.last.as_ref().map(|s| s.at)
    }

    pub fn has_open_goal(&self) -> bool {
        !self.event.is_empty() || !self.goal.is_empty()
    }

    /// Feeds one scene; returns goals that were closed by it.
    pub fn push(&mut self, scene: SceneInstant) -> Vec<TreeNode> {
        let mut out = Vec::new();
        if let Some(last) = &self.last {
            if scene.at - last.at > self.config.idle_gap {
                out.extend(self.flush());
            }
        }
        let starts_event = match &self.last {
            _ if self.event.is_empty() => true,
            None => true,
            Some(last) => {
                scene.attributes.contains_key(SPEECH_KEY)
                    || !without_speech(&last.attributes).eq(without_speech(&scene.attributes))
            }
        };
        if starts_event && !self.event.is_empty() {
            let ev = self.close_event();
            let interaction = ev
                .children
                .first()
                .and_then(Child::as_node)
                .and_then(|s| s.scene.as_ref())
                .and_then(|s| s.attr("action"))
                .is_some_and(|a| self.config.interaction_actions.contains(action_name(a)));
            self.goal.push(ev);
            if interaction {
                out.extend(self.close_goal());
            }
        }
        self.last = Some(scene.clone());
        self.event.push(TreeNode::scene(scene));
        out
    }

    /// Closes the open goal if nothing arrived for longer than the idle gap.
    pub fn flush_idle(&mut self, now: Timestamp) -> Vec<TreeNode> {
        match self.last_seen() {
            Some(t) if now - t > self.config.idle_gap => self.flush(),
            _ => Vec::new(),
        }
    }

    pub fn flush(&mut self) -> Vec<TreeNode> {
        if !self.event.is_empty() {
            let ev = self.close_event();
            self.goal.push(ev);
        }
        self.close_goal().into_iter().collect()
    }

    fn close_event(&mut self) -> TreeNode {
        let scenes = std::mem::take(&mut self.event);
        let first = scenes[0].scene.clone().unwrap_or_default();
        let span = TimeSpan::new(scenes[0].span.start, scenes[scenes.len() - 1].span.end);
        let mut n = TreeNode::detached(EVENT_LEVEL, span, event_summary(&first));
        n.children = scenes.into_iter().map(Child::Node).collect();
        n
    }

    fn close_goal(&mut self) -> Option<TreeNode> {
        if self.goal.is_empty() {
            return None;
        }
        let events = std::mem::take(&mut self.goal);
        let summary = events.iter().map(TreeNode::first_line).collect::<Vec<_>>().join(", ");
        let span = TimeSpan::new(events[0].span.start, events[events.len() - 1].span.end);
        let mut n = TreeNode::detached(GOAL_LEVEL, span, summary);
        n.children = events.into_iter().map(Child::Node).collect();
        Some(n)
    }
}

/// `Pickup(Knife_0) at CounterTop with Alice; heard "hello"`.
fn event_summary(s: &SceneInstant) -> String {
    let mut out = match (s.attr("action"), s.attr("location")) {
        (Some(a), Some(l)) => format!("{a} at {l}"),
        (Some(a), None) => a.to_string(),
        (None, Some(l)) => format!("At {l}"),
        (None, None) => without_speech(&s.attributes).map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("; "),
    };
    if let Some(p) = s.attr("person") {
        out.push_str(&format!(" with {p}"));
    }
    if let Some(sp) = s.attr(SPEECH_KEY) {
        out.push_str(&format!("; heard \"{sp}\""));
    }
    out
}
