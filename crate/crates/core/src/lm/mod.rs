//! Language-model gateway.
//!
//! All model traffic goes through [`Gateway::complete`], which renders nothing
//! itself but enforces the response cap and books token usage per prompt
//! kind. Backends: [`ScriptedBackend`] for tests and offline runs,
//! [`HttpBackend`] for a chat-completions endpoint, and the record/replay
//! pair in [`record`].

mod http;
pub mod parse;
pub mod prompts;
pub mod record;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::whitespace_tokens;

pub use http::{HttpBackend, HttpConfig};
pub use parse::{parse_structured, ParseError, Parsed};
pub use prompts::{render_prompt, Bindings};
pub use scripted::{GroupingBehavior, LearningBehavior, Pattern, RelevanceBehavior, ScriptRule, ScriptedBackend};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Grouping,
    RelevanceEstimation,
    RuleLearning,
    QaAgent,
    DialogRouting,
    Judge,
    SimpleSummarize,
}

impl PromptKind {
    pub const ALL: [PromptKind; 7] = [
        PromptKind::Grouping,
        PromptKind::RelevanceEstimation,
        PromptKind::RuleLearning,
        PromptKind::QaAgent,
        PromptKind::DialogRouting,
        PromptKind::Judge,
        PromptKind::SimpleSummarize,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::Grouping => "grouping",
            PromptKind::RelevanceEstimation => "relevance_estimation",
            PromptKind::RuleLearning => "rule_learning",
            PromptKind::QaAgent => "qa_agent",
            PromptKind::DialogRouting => "dialog_routing",
            PromptKind::Judge => "judge",
            PromptKind::SimpleSummarize => "simple_summarize",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    Human,
    Ai,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Message { role, text: text.into() }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Message::new(Role::System, text)
    }

    pub fn human(text: impl Into<String>) -> Self {
        Message::new(Role::Human, text)
    }

    pub fn ai(text: impl Into<String>) -> Self {
        Message::new(Role::Ai, text)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        TokenUsage { prompt_tokens, completion_tokens }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    /// Whitespace-token counts for a request and its reply.
    pub fn counted(messages: &[Message], reply: &str) -> Self {
        TokenUsage {
            prompt_tokens: messages.iter().map(|m| whitespace_tokens(&m.text)).sum(),
            completion_tokens: whitespace_tokens(reply),
        }
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;
    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), Add::add)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmRequest {
    pub kind: PromptKind,
    pub messages: Vec<Message>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmReply {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
    pub truncated: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LmError {
    #[error("backend unreachable after {attempts} attempts: {last}")]
    Unreachable { attempts: u32, last: String },
    #[error("prompt template {kind} has no binding for slot {slot:?}")]
    MissingBinding { kind: PromptKind, slot: String },
    #[error("backend error: {0}")]
    Backend(String),
    #[error("no recorded exchange for this {0} request")]
    NotRecorded(PromptKind),
}

pub trait LmBackend: Send + Sync {
    fn complete(&self, request: &LmRequest) -> Result<LmReply, LmError>;
}

impl<B: LmBackend + ?Sized> LmBackend for Arc<B> {
    fn complete(&self, request: &LmRequest) -> Result<LmReply, LmError> {
        (**self).complete(request)
    }
}

/// Token usage booked per prompt kind.
#[derive(Debug, Default)]
pub struct UsageLedger {
    per_kind: Mutex<[TokenUsage; 7]>,
    calls: Mutex<[u64; 7]>,
}

pub type UsageSnapshot = BTreeMap<PromptKind, TokenUsage>;

impl UsageLedger {
    pub fn record(&self, kind: PromptKind, usage: TokenUsage) {
        self.per_kind.lock()[kind.index()] += usage;
        self.calls.lock()[kind.index()] += 1;
    }

    pub fn get(&self, kind: PromptKind) -> TokenUsage {
        self.per_kind.lock()[kind.index()]
    }

    pub fn calls(&self, kind: PromptKind) -> u64 {
        self.calls.lock()[kind.index()]
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        let per = *self.per_kind.lock();
        PromptKind::ALL.iter().map(|k| (*k, per[k.index()])).collect()
    }

    pub fn total(&self) -> TokenUsage {
        self.per_kind.lock().iter().copied().sum()
    }
}

pub const DEFAULT_MAX_RESPONSE_CHARS: usize = 16_000;

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn LmBackend>,
    ledger: Arc<UsageLedger>,
    max_response_chars: usize,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("max_response_chars", &self.max_response_chars).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: impl LmBackend + 'static) -> Self {
        Gateway::from_arc(Arc::new(backend))
    }

    pub fn from_arc(backend: Arc<dyn LmBackend>) -> Self {
        Gateway {
            backend,
            ledger: Arc::new(UsageLedger::default()),
            max_response_chars: DEFAULT_MAX_RESPONSE_CHARS,
        }
    }

    pub fn with_max_response_chars(mut self, max: usize) -> Self {
        self.max_response_chars = max;
        self
    }

    /// Same backend, separate usage ledger.
    pub fn fresh_ledger(&self) -> Gateway {
        Gateway {
            backend: self.backend.clone(),
            ledger: Arc::new(UsageLedger::default()),
            max_response_chars: self.max_response_chars,
        }
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn complete(&self, kind: PromptKind, messages: Vec<Message>) -> Result<Completion, LmError> {
        let request = LmRequest { kind, messages };
        let reply = self.backend.complete(&request)?;
        let (text, truncated) = match reply.text.char_indices().nth(self.max_response_chars) {
            Some((idx, _)) => (reply.text[..idx].to_string(), true),
            None => (reply.text, false),
        };
        if truncated {
            tracing::warn!(%kind, "model response truncated to {} chars", self.max_response_chars);
        }
        self.ledger.record(kind, reply.usage);
        Ok(Completion { text, usage: reply.usage, truncated })
    }

    /// Renders the template for `kind` and completes it.
    pub fn run(&self, kind: PromptKind, bindings: &Bindings) -> Result<Completion, LmError> {
        let messages = render_prompt(kind, bindings)?;
        self.complete(kind, messages)
    }
}
