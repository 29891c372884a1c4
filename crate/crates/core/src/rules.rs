//! Natural-language rules that decide what is worth keeping, and how user
//! feedback rewrites them.

use std::fs::OpenOptions;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::parse::parse_rules;
use crate::lm::{Bindings, Gateway, LmError, PromptKind, TokenUsage};
use crate::time::Timestamp;

pub const MAX_RULES: usize = 50;
pub const RULES_HEADER: &str = "emtree-rules/1";

/// Shown above the numbered rules whenever they go into a prompt.
pub const DEFAULT_FORGET_LINE: &str =
    "By default an entry may be forgotten once its time is up. The rules below name the exceptions.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "lowercase")]
pub enum RuleOrigin {
    Seed,
    Feedback { id: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub text: String,
    pub origin: RuleOrigin,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuleSet {
    rules: Vec<Rule>,
    version: u64,
}

impl RuleSet {
    pub fn new() -> Self {
        RuleSet::default()
    }

    pub fn seeded<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        let rules = texts.into_iter().map(|t| Rule { text: t.into(), origin: RuleOrigin::Seed }).collect();
        RuleSet { rules, version: 0 }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn texts(&self) -> Vec<&str> {
        self.rules.iter().map(|r| r.text.as_str()).collect()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// New version holding `texts`. Rules whose text survives keep their
    /// origin; everything else is attributed to `feedback_id`.
    fn successor(&self, texts: Vec<String>, feedback_id: u64) -> RuleSet {
        let mut texts = texts;
        if texts.len() > MAX_RULES {
            tracing::warn!("rule list has {} entries, keeping the first {MAX_RULES}", texts.len());
            texts.truncate(MAX_RULES);
        }
        let rules = texts
            .into_iter()
            .map(|text| {
                let origin = self
                    .rules
                    .iter()
                    .find(|r| r.text == text)
                    .map(|r| r.origin)
                    .unwrap_or(RuleOrigin::Feedback { id: feedback_id });
                Rule { text, origin }
            })
            .collect();
        RuleSet { rules, version: self.version + 1 }
    }
}

/// `1. first rule` lines, or a marker when there are none.
pub fn numbered_rules(rules: &RuleSet) -> String {
    if rules.is_empty() {
        return "(no rules yet)".into();
    }
    rules
        .rules
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{}. {}", i + 1, r.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Rules block for relevance and grouping prompts.
pub fn render_rules(rules: &RuleSet) -> String {
    if rules.is_empty() {
        return DEFAULT_FORGET_LINE.to_string();
    }
    format!("{DEFAULT_FORGET_LINE}\n{}", numbered_rules(rules))
}

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("feedback is empty")]
    EmptyFeedback,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed rules file: {0}")]
    Malformed(String),
    #[error("audit log does not replay: {0}")]
    Audit(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Learned {
    pub rules: RuleSet,
    /// The model's reply could not be used; the feedback was appended as is.
    pub fallback: bool,
    pub usage: TokenUsage,
}

/// Rewrites `rules` in light of `feedback`. Model failures and unparseable
/// replies fall back to appending the feedback verbatim.
pub fn learn_from_feedback(
    rules: &RuleSet,
    feedback: &str,
    gateway: &Gateway,
    feedback_id: u64,
) -> Result<Learned, RulesError> {
    let feedback = feedback.trim();
    if feedback.is_empty() {
        return Err(RulesError::EmptyFeedback);
    }
    let bindings = Bindings::new().with("rules", numbered_rules(rules)).with("feedback", feedback);
    let (parsed, usage) = match gateway.run(PromptKind::RuleLearning, &bindings) {
        Ok(c) => (parse_rules(&c.text).ok(), c.usage),
        Err(e @ LmError::MissingBinding { .. }) => panic!("rule-learning template out of sync: {e}"),
        Err(e) => {
            tracing::warn!("rule learning failed, appending feedback verbatim: {e}");
            (None, TokenUsage::default())
        }
    };
    let (texts, fallback) = match parsed {
        Some(t) => (t, false),
        None => {
            let mut t: Vec<String> = rules.texts().into_iter().map(String::from).collect();
            t.push(feedback.to_string());
            (t, true)
        }
    };
    Ok(Learned { rules: rules.successor(texts, feedback_id), fallback, usage })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub at: Timestamp,
    pub feedback_id: u64,
    pub feedback: String,
    pub before_version: u64,
    pub after_version: u64,
    pub before: Vec<String>,
    pub after: Vec<String>,
    pub fallback: bool,
}

/// Shared, versioned rule set. Readers pin an `Arc`; writers swap in a new
/// version so readers never observe a half-applied change.
pub struct RuleStore {
    current: RwLock<Arc<RuleSet>>,
    writer: Mutex<u64>,
    audit: Mutex<Vec<AuditRecord>>,
    audit_path: Option<PathBuf>,
}

impl RuleStore {
    pub fn new(initial: RuleSet) -> Self {
        RuleStore {
            current: RwLock::new(Arc::new(initial)),
            writer: Mutex::new(1),
            audit: Mutex::new(Vec::new()),
            audit_path: None,
        }
    }

    /// Also appends every audit record to `path` as JSON lines.
    pub fn with_audit_file(mut self, path: impl Into<PathBuf>) -> Self {
        self.audit_path = Some(path.into());
        self
    }

    pub fn pin(&self) -> Arc<RuleSet> {
        self.current.read().clone()
    }

    pub fn audit_log(&self) -> Vec<AuditRecord> {
        self.audit.lock().clone()
    }

    pub fn learn(&self, feedback: &str, gateway: &Gateway, at: Timestamp) -> Result<(Arc<RuleSet>, Learned), RulesError> {
        let mut next_id = self.writer.lock();
        let before = self.pin();
        let learned = learn_from_feedback(&before, feedback, gateway, *next_id)?;
        *next_id += 1;
        let record = AuditRecord {
            at,
            feedback_id: *next_id - 1,
            feedback: feedback.trim().to_string(),
            before_version: before.version(),
            after_version: learned.rules.version(),
            before: before.texts().into_iter().map(String::from).collect(),
            after: learned.rules.texts().into_iter().map(String::from).collect(),
            fallback: learned.fallback,
        };
        if let Some(p) = &self.audit_path {
            let line = serde_json::to_string(&record).expect("audit record serializes");
            OpenOptions::new().create(true).append(true).open(p)?.write_all(format!("{line}\n").as_bytes())?;
        }
        self.audit.lock().push(record);
        let new = Arc::new(learned.rules.clone());
        *self.current.write() = new.clone();
        Ok((new, learned))
    }

    pub fn save(&self, path: &Path) -> Result<(), RulesError> {
        let set = self.pin();
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            writeln!(f, "{RULES_HEADER}")?;
            writeln!(f, "{}", serde_json::json!({ "version": set.version() }))?;
            for r in set.rules() {
                writeln!(f, "{}", serde_json::to_string(r).expect("rule serializes"))?;
            }
            f.sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RuleSet, RulesError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != RULES_HEADER {
            return Err(RulesError::Malformed(format!("unexpected header {header:?}")));
        }
        let meta: serde_json::Value = serde_json::from_str(&lines.next().transpose()?.unwrap_or_default())
            .map_err(|e| RulesError::Malformed(e.to_string()))?;
        let version = meta["version"].as_u64().ok_or_else(|| RulesError::Malformed("missing version".into()))?;
        let mut rules = Vec::new();
        for l in lines {
            let l = l?;
            if l.trim().is_empty() {
                continue;
            }
            rules.push(serde_json::from_str(&l).map_err(|e| RulesError::Malformed(e.to_string()))?);
        }
        Ok(RuleSet { rules, version })
    }
}

/// Re-applies an audit log to its seed and returns the resulting texts.
pub fn replay_audit(seed: &RuleSet, log: &[AuditRecord]) -> Result<Vec<String>, RulesError> {
    let mut current: Vec<String> = seed.texts().into_iter().map(String::from).collect();
    for r in log {
        if r.before != current {
            return Err(RulesError::Audit(format!("record {} starts from a different rule set", r.feedback_id)));
        }
        current = r.after.clone();
    }
    Ok(current)
}
