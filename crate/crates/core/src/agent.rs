//! Question answering over a tree snapshot.
//!
//! The model sees the top of the tree and repeatedly asks to expand an entry
//! (or, in flat mode, to search) until it answers. Each observation is sent
//! back as a new human turn, so the whole exploration is one growing
//! conversation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::lm::parse::{parse_action, AgentAction};
use crate::lm::prompts::render_prompt;
use crate::lm::{Bindings, Gateway, LmError, Message, PromptKind, TokenUsage};
use crate::text::{content_words, token_set};
use crate::time::Timestamp;
use crate::tree::{entry_line, node_line, Audience, Child, HistoryTree, NodeId};

pub const DEFAULT_MAX_STEPS: usize = 12;
pub const GAVE_UP_ANSWER: &str = "I could not find that in my memory.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplorationMode {
    /// Start at the top of the hierarchy and expand.
    Tree,
    /// The top-level entries form one long list; keyword search is allowed.
    Flat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub max_steps: usize,
    pub search_results: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig { max_steps: DEFAULT_MAX_STEPS, search_results: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaStep {
    pub reply: String,
    pub action: Option<AgentAction>,
    /// What the agent was shown in return; empty for the final answer.
    pub observation: String,
    pub usage: TokenUsage,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaResult {
    pub answer: String,
    pub usage: TokenUsage,
    pub trace: Vec<QaStep>,
    pub gave_up: bool,
    /// The last listing the agent looked at had tombstones and nothing
    /// about the question's topic.
    pub forgotten_indicated: bool,
    pub snapshot_version: u64,
}

/// Live nodes whose summary shares words with `keywords`, best first; ties
/// go to the more recent node.
pub fn lexical_search(snapshot: &HistoryTree, keywords: &str) -> Vec<(NodeId, usize)> {
    let wanted = content_words(keywords);
    if wanted.is_empty() {
        return Vec::new();
    }
    let mut hits: Vec<(NodeId, usize, Timestamp)> = snapshot
        .nodes()
        .into_iter()
        .filter_map(|n| {
            let toks = token_set(&n.summary);
            let score = wanted.iter().filter(|w| toks.contains(*w)).count();
            (score > 0).then_some((n.id, score, n.span.end))
        })
        .collect();
    hits.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.cmp(&a.2)).then(b.0.cmp(&a.0)));
    hits.into_iter().map(|(id, s, _)| (id, s)).collect()
}

fn listing(children: &[Child]) -> String {
    if children.is_empty() {
        return "(empty)".into();
    }
    children.iter().map(|c| entry_line(c, Audience::Qa)).collect::<Vec<_>>().join("\n")
}

/// Tombstones present and no live entry mentions the question's topic.
fn only_forgotten(children: &[Child], topic: &BTreeSet<String>) -> bool {
    let has_placeholder = children.iter().any(Child::is_placeholder);
    let on_topic = children.iter().filter_map(Child::as_node).any(|n| {
        let toks = token_set(&n.summary);
        topic.iter().any(|w| toks.contains(w))
    });
    has_placeholder && !on_topic
}

pub fn answer_question(
    snapshot: &HistoryTree,
    question: &str,
    now: Timestamp,
    mode: ExplorationMode,
    gateway: &Gateway,
    config: &AgentConfig,
) -> Result<QaResult, LmError> {
    let bindings = Bindings::new()
        .with("now", now.format_minutes())
        .with("question", question.trim())
        .with("frontier", listing(snapshot.children()));
    let mut messages = render_prompt(PromptKind::QaAgent, &bindings)?;
    let topic = content_words(question);
    let mut last_view: Vec<Child> = snapshot.children().to_vec();
    let mut trace = Vec::new();
    let mut usage = TokenUsage::default();

    for _ in 0..config.max_steps.max(1) {
        let c = gateway.complete(PromptKind::QaAgent, messages.clone())?;
        usage += c.usage;
        messages.push(Message::ai(c.text.clone()));
        let action = parse_action(&c.text).ok();
        let observation = match &action {
            Some(AgentAction::Answer(text)) => {
                let answer = text.trim().to_string();
                trace.push(QaStep { reply: c.text, action, observation: String::new(), usage: c.usage });
                return Ok(QaResult {
                    answer,
                    usage,
                    trace,
                    gave_up: false,
                    forgotten_indicated: only_forgotten(&last_view, &topic),
                    snapshot_version: snapshot.version(),
                });
            }
            Some(AgentAction::Expand(id)) => match snapshot.find(*id) {
                Some(n) if !n.children.is_empty() => {
                    last_view = n.children.clone();
                    format!("Inside {}:\n{}", node_line(n), listing(&n.children))
                }
                Some(n) => format!("Entry [{}] has nothing inside it; its full text is: {}", n.id, n.summary),
                None => format!("There is no entry [{id}]. Pick an id from the lines shown so far."),
            },
            Some(AgentAction::Search(keywords)) if mode == ExplorationMode::Flat => {
                let hits = lexical_search(snapshot, keywords);
                if hits.is_empty() {
                    "No entries match.".to_string()
                } else {
                    let lines: Vec<String> = hits
                        .iter()
                        .take(config.search_results)
                        .filter_map(|(id, _)| snapshot.find(*id).map(node_line))
                        .collect();
                    format!("Search results:\n{}", lines.join("\n"))
                }
            }
            Some(AgentAction::Search(_)) => "Search is not available here; expand an entry or answer.".to_string(),
            None => "Reply with exactly one of expand(<id>), search(<keywords>) or answer(<text>).".to_string(),
        };
        messages.push(Message::human(observation.clone()));
        trace.push(QaStep { reply: c.text, action, observation, usage: c.usage });
    }
    Ok(QaResult {
        answer: GAVE_UP_ANSWER.into(),
        usage,
        trace,
        gave_up: true,
        forgotten_indicated: only_forgotten(&last_view, &topic),
        snapshot_version: snapshot.version(),
    })
}
