//! Utterance routing and the ask / feedback loop.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{answer_question, AgentConfig, ExplorationMode, QaResult};
use crate::lm::parse::{parse_route, Route};
use crate::lm::{Bindings, Gateway, LmError, PromptKind};
use crate::rules::{RuleStore, RulesError};
use crate::time::Timestamp;
use crate::tree::HistoryTree;

pub const CONTEXT_TURNS: usize = 10;

/// Where a session reads the newest committed tree from.
pub trait SnapshotSource: Send + Sync {
    fn latest(&self) -> Arc<HistoryTree>;
}

impl<F: Fn() -> Arc<HistoryTree> + Send + Sync> SnapshotSource for F {
    fn latest(&self) -> Arc<HistoryTree> {
        self()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Robot,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DialogReply {
    Answer(QaResult),
    Feedback { rules_version: u64, text: String },
    Direct { text: String },
}

impl DialogReply {
    pub fn text(&self) -> &str {
        match self {
            DialogReply::Answer(r) => &r.answer,
            DialogReply::Feedback { text, .. } | DialogReply::Direct { text } => text,
        }
    }
}

#[derive(Debug, Error)]
pub enum DialogError {
    #[error("nothing was said")]
    Empty,
    #[error("could not answer: {0}")]
    Answer(#[from] LmError),
    #[error("could not learn from the feedback: {0}")]
    Learn(#[from] RulesError),
}

fn render_context(context: &[Turn]) -> String {
    if context.is_empty() {
        return "(none)".into();
    }
    context
        .iter()
        .map(|t| match t.speaker {
            Speaker::User => format!("User: {}", t.text),
            Speaker::Robot => format!("Robot: {}", t.text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// One routing call. A failed call is treated as a question about the past.
pub fn route(utterance: &str, context: &[Turn], gateway: &Gateway) -> Route {
    let bindings = Bindings::new().with("context", render_context(context)).with("utterance", utterance.trim());
    match gateway.run(PromptKind::DialogRouting, &bindings) {
        Ok(c) => match parse_route(&c.text) {
            Route::Question(q) if q.trim().is_empty() => Route::Question(utterance.trim().to_string()),
            Route::Feedback(f) if f.trim().is_empty() => Route::Feedback(utterance.trim().to_string()),
            r => r,
        },
        Err(e) => {
            tracing::warn!("routing failed, treating the utterance as a question: {e}");
            Route::Question(utterance.trim().to_string())
        }
    }
}

pub struct DialogSession {
    snapshots: Arc<dyn SnapshotSource>,
    rules: Arc<RuleStore>,
    gateway: Gateway,
    agent: AgentConfig,
    mode: ExplorationMode,
    context: VecDeque<Turn>,
}

impl DialogSession {
    pub fn new(snapshots: Arc<dyn SnapshotSource>, rules: Arc<RuleStore>, gateway: Gateway) -> Self {
        DialogSession {
            snapshots,
            rules,
            gateway,
            agent: AgentConfig::default(),
            mode: ExplorationMode::Tree,
            context: VecDeque::new(),
        }
    }

    pub fn with_agent(mut self, agent: AgentConfig, mode: ExplorationMode) -> Self {
        self.agent = agent;
        self.mode = mode;
        self
    }

    pub fn context(&self) -> impl Iterator<Item = &Turn> {
        self.context.iter()
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    fn remember(&mut self, speaker: Speaker, text: &str) {
        self.context.push_back(Turn { speaker, text: text.to_string() });
        while self.context.len() > CONTEXT_TURNS {
            self.context.pop_front();
        }
    }

    pub fn handle(&mut self, utterance: &str, now: Timestamp) -> Result<DialogReply, DialogError> {
        if utterance.trim().is_empty() {
            return Err(DialogError::Empty);
        }
        let context: Vec<Turn> = self.context.iter().cloned().collect();
        let reply = match route(utterance, &context, &self.gateway) {
            Route::Question(q) => self.ask(&q, now)?,
            Route::Feedback(f) => self.feedback(&f, now)?,
            Route::Direct(text) => DialogReply::Direct { text },
        };
        self.remember(Speaker::User, utterance.trim());
        self.remember(Speaker::Robot, reply.text());
        Ok(reply)
    }

    /// Answers on the snapshot current at the time of the call.
    pub fn ask(&self, question: &str, now: Timestamp) -> Result<DialogReply, DialogError> {
        let snapshot = self.snapshots.latest();
        let r = answer_question(&snapshot, question, now, self.mode, &self.gateway, &self.agent)?;
        Ok(DialogReply::Answer(r))
    }

    pub fn feedback(&self, feedback: &str, now: Timestamp) -> Result<DialogReply, DialogError> {
        let (rules, _) = self.rules.learn(feedback, &self.gateway, now)?;
        Ok(DialogReply::Feedback {
            rules_version: rules.version(),
            text: format!("Thanks, I will keep that in mind (rules version {}).", rules.version()),
        })
    }
}
