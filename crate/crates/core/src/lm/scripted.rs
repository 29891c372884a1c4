//! Deterministic stand-in for a language model.
//!
//! Fixed rules (kind + pattern -> reply) are checked first. Everything else
//! falls through to a small heuristic per prompt kind that reads the rendered
//! prompt the same way a model would: by its section anchors.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

use super::parse::{JudgeCategory, RelevanceScore};
use super::prompts::*;
use super::{LmBackend, LmError, LmReply, LmRequest, Message, PromptKind, Role, TokenUsage};
use crate::text::{content_words, normalize, token_set, tokenize};

#[derive(Clone, Debug)]
pub enum Pattern {
    Contains(String),
    Regex(Regex),
}

impl Pattern {
    pub fn regex(re: &str) -> Result<Self, regex::Error> {
        Ok(Pattern::Regex(Regex::new(re)?))
    }

    fn matches(&self, text: &str) -> bool {
        match self {
            Pattern::Contains(s) => text.contains(s.as_str()),
            Pattern::Regex(r) => r.is_match(text),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScriptRule {
    pub kind: Option<PromptKind>,
    pub pattern: Pattern,
    pub reply: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupingBehavior {
    /// All current items form one new group.
    NewGroup,
    /// Current items extend the most recent previous group.
    AppendToLatest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelevanceBehavior {
    Constant(RelevanceScore),
    /// `matched` when every content word of some rule occurs in the item.
    RuleMatch { matched: RelevanceScore, otherwise: RelevanceScore },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LearningBehavior {
    /// Existing rules plus the feedback sentence as a new rule.
    AppendFeedback,
    /// Replies with text that contains no numbered list.
    Unparseable,
}

#[derive(Clone, Debug)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
    grouping: GroupingBehavior,
    relevance: RelevanceBehavior,
    learning: LearningBehavior,
    summary_terms: usize,
    max_group: usize,
}

impl Default for ScriptedBackend {
    fn default() -> Self {
        ScriptedBackend {
            rules: Vec::new(),
            grouping: GroupingBehavior::NewGroup,
            relevance: RelevanceBehavior::Constant(RelevanceScore::Finite(0)),
            learning: LearningBehavior::AppendFeedback,
            summary_terms: 24,
            max_group: usize::MAX,
        }
    }
}

impl ScriptedBackend {
    pub fn new() -> Self {
        ScriptedBackend::default()
    }

    pub fn with_rule(mut self, kind: Option<PromptKind>, pattern: Pattern, reply: impl Into<String>) -> Self {
        self.rules.push(ScriptRule { kind, pattern, reply: reply.into() });
        self
    }

    pub fn grouping(mut self, b: GroupingBehavior) -> Self {
        self.grouping = b;
        self
    }

    pub fn relevance(mut self, b: RelevanceBehavior) -> Self {
        self.relevance = b;
        self
    }

    pub fn learning(mut self, b: LearningBehavior) -> Self {
        self.learning = b;
        self
    }

    pub fn summary_terms(mut self, n: usize) -> Self {
        self.summary_terms = n.max(1);
        self
    }

    /// Largest group `AppendToLatest` will grow; beyond it a new group starts.
    pub fn max_group(mut self, n: usize) -> Self {
        self.max_group = n.max(1);
        self
    }

    fn reply_for(&self, req: &LmRequest) -> String {
        let all: String = req.messages.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n");
        for r in &self.rules {
            if r.kind.is_none_or(|k| k == req.kind) && r.pattern.matches(&all) {
                return r.reply.clone();
            }
        }
        let human = req.messages.iter().find(|m| m.role == Role::Human).map(|m| m.text.as_str()).unwrap_or("");
        match req.kind {
            PromptKind::Grouping => self.group(human),
            PromptKind::RelevanceEstimation => self.estimate(human),
            PromptKind::RuleLearning => self.learn(human),
            PromptKind::QaAgent => explore(&req.messages),
            PromptKind::DialogRouting => route(human),
            PromptKind::Judge => judge(human),
            PromptKind::SimpleSummarize => {
                let items: Vec<&str> = section(human, ITEMS_ANCHOR, &["\n\nAnswer like this:"])
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .collect();
                format!("Summary: {}", compose_summary(&items, &[], self.summary_terms))
            }
        }
    }

    fn group(&self, human: &str) -> String {
        let rules = numbered(section(human, RULES_ANCHOR, &[PREVIOUS_ANCHOR]));
        let previous = section(human, PREVIOUS_ANCHOR, &[CURRENT_ANCHOR]);
        let current = section(human, CURRENT_ANCHOR, &["\n\nItems are numbered"]);
        let cur_items = items(current);
        let prev_items = items(previous);
        let Some(newest_group_start) = cur_items.iter().map(|(i, _)| *i).max() else {
            return "Reasoning: nothing new\nJSON: {}".into();
        };
        let mut from = newest_group_start;
        if self.grouping == GroupingBehavior::AppendToLatest {
            if let Some((a, _)) = group_headers(previous).into_iter().find(|(_, b)| *b == newest_group_start + 1) {
                if a < self.max_group {
                    from = a;
                }
            }
        }
        let texts: Vec<&str> = prev_items
            .iter()
            .chain(cur_items.iter())
            .filter(|(i, _)| *i <= from)
            .map(|(_, t)| *t)
            .collect();
        let summary = compose_summary(&texts, &rules, self.summary_terms);
        let key = if from == 0 { "0".to_string() } else { format!("{from}-0") };
        format!(
            "Reasoning: items {from} to 0 belong together\nJSON: {}",
            serde_json::json!({ key: summary })
        )
    }

    fn estimate(&self, human: &str) -> String {
        let score = match self.relevance {
            RelevanceBehavior::Constant(s) => s,
            RelevanceBehavior::RuleMatch { matched, otherwise } => {
                let rules = numbered(section(human, RULES_ANCHOR, &[ITEM_ANCHOR]));
                let item = section(human, ITEM_ANCHOR, &[CONTEXT_ANCHOR]);
                if rules.iter().any(|r| rule_matches(r, item)) {
                    matched
                } else {
                    otherwise
                }
            }
        };
        format!("Reasoning: compared the item with the rules\nRelevance: {score}")
    }

    fn learn(&self, human: &str) -> String {
        if self.learning == LearningBehavior::Unparseable {
            return "I am not sure how to change the rules.".into();
        }
        let mut rules = numbered(section(human, EXISTING_RULES_ANCHOR, &[FEEDBACK_ANCHOR]));
        let fb = section(human, FEEDBACK_ANCHOR, &["\n\nProduce"]).trim().trim_matches('"').trim();
        if !fb.is_empty() {
            rules.push(fb.to_string());
        }
        rules.iter().enumerate().map(|(i, r)| format!("{}. {r}", i + 1)).collect::<Vec<_>>().join("\n")
    }
}

impl LmBackend for ScriptedBackend {
    fn complete(&self, request: &LmRequest) -> Result<LmReply, LmError> {
        let text = self.reply_for(request);
        Ok(LmReply { usage: TokenUsage::counted(&request.messages, &text), text })
    }
}

/// Text after `anchor` up to the first of `ends` (or the end).
fn section<'a>(text: &'a str, anchor: &str, ends: &[&str]) -> &'a str {
    let Some(i) = text.find(anchor) else { return "" };
    let body = &text[i + anchor.len()..];
    let end = ends.iter().filter_map(|e| body.find(e)).min().unwrap_or(body.len());
    body[..end].trim_matches('\n')
}

fn numbered(text: &str) -> Vec<String> {
    super::parse::parse_rules(text).unwrap_or_default()
}

/// `(index, text)` for lines shaped `N: text`.
fn items(block: &str) -> Vec<(usize, &str)> {
    block
        .lines()
        .filter_map(|l| {
            let (n, rest) = l.split_once(": ")?;
            Some((n.trim().parse().ok()?, rest))
        })
        .collect()
}

/// `(from, to)` of lines shaped `# group (5-3): ...`.
fn group_headers(block: &str) -> Vec<(usize, usize)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^# group \((\d+)-(\d+)\)").unwrap());
    block
        .lines()
        .filter_map(|l| {
            let c = re.captures(l)?;
            Some((c[1].parse().ok()?, c[2].parse().ok()?))
        })
        .collect()
}

/// True when every content word of the rule occurs in the text.
pub fn rule_matches(rule: &str, text: &str) -> bool {
    let words = content_words(rule);
    if words.is_empty() {
        return false;
    }
    let tokens = token_set(text);
    words.iter().all(|w| tokens.contains(w))
}

fn call_terms(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"[A-Z][A-Za-z]*\([^()]*\)").unwrap());
    re.find_iter(text).map(|m| m.as_str().to_string()).collect()
}

/// Part of an entry line after the `|` separator, if any.
fn entry_body(line: &str) -> &str {
    match line.split_once(" | ") {
        Some((_, body)) => body,
        None => line,
    }
}

/// Mechanical summary: distinct `Action(Object)` terms, rule-relevant first.
pub fn compose_summary(lines: &[&str], rules: &[String], cap: usize) -> String {
    let mut seen = BTreeSet::new();
    let mut terms: Vec<String> = Vec::new();
    for l in lines {
        for t in call_terms(entry_body(l)) {
            if seen.insert(t.clone()) {
                terms.push(t);
            }
        }
    }
    if terms.is_empty() {
        let joined: Vec<&str> = lines.iter().map(|l| entry_body(l).trim()).filter(|l| !l.is_empty()).take(3).collect();
        let s = joined.join("; ");
        return crate::text::truncate_chars(&s, 200).to_string();
    }
    let relevant = |t: &String| rules.iter().any(|r| content_words(r).iter().any(|w| token_set(t).contains(w)));
    let (mut first, rest): (Vec<String>, Vec<String>) = terms.into_iter().partition(relevant);
    first.extend(rest);
    let more = first.len() > cap;
    first.truncate(cap);
    let mut s = first.join(", ");
    if more {
        s.push_str(" and more");
    }
    s
}

struct Entry<'a> {
    id: Option<u64>,
    scene: bool,
    expandable: bool,
    head: &'a str,
    body: &'a str,
    order: usize,
}

fn parse_entries(text: &str, order_base: usize) -> Vec<Entry<'_>> {
    text.lines()
        .enumerate()
        .filter_map(|(i, l)| {
            let l = l.trim();
            if l.starts_with("forgotten:") {
                return Some(Entry { id: None, scene: false, expandable: false, head: l, body: l, order: order_base + i });
            }
            let rest = l.strip_prefix('[')?;
            let (id, rest) = rest.split_once(']')?;
            let id: u64 = id.parse().ok()?;
            let (head, body) = rest.split_once(" | ").unwrap_or((rest, ""));
            Some(Entry {
                id: Some(id),
                scene: head.trim_start().starts_with("scene"),
                expandable: head.contains(" child"),
                head,
                body,
                order: order_base + i,
            })
        })
        .collect()
}

/// Best-first walk towards the entry that mentions the question's keywords.
fn explore(messages: &[Message]) -> String {
    let Some(first) = messages.iter().find(|m| m.role == Role::Human) else {
        return "answer(I don't know.)".into();
    };
    let question = section(&first.text, QUESTION_ANCHOR, &["\n"]).trim().to_string();
    let keywords = content_words(&question);
    let qtokens = token_set(&question);
    let earliest = qtokens.contains("first") || qtokens.contains("earliest");

    let expanded: BTreeSet<u64> = messages
        .iter()
        .filter(|m| m.role == Role::Ai)
        .filter_map(|m| match super::parse::parse_action(&m.text) {
            Ok(super::parse::AgentAction::Expand(id)) => Some(id.0),
            _ => None,
        })
        .collect();
    let searched = messages
        .iter()
        .any(|m| m.role == Role::Ai && m.text.trim_start().starts_with("search("));

    let humans: Vec<&Message> = messages.iter().filter(|m| m.role == Role::Human).collect();
    let mut seen: Vec<Entry> = Vec::new();
    for (k, m) in humans.iter().enumerate() {
        seen.extend(parse_entries(&m.text, k * 100_000));
    }
    let last_obs = parse_entries(&humans.last().expect("at least one").text, 0);

    let score = |e: &Entry| {
        let toks = token_set(e.body);
        keywords.iter().filter(|w| toks.contains(*w)).count()
    };
    let full = keywords.len().max(1);
    // Later lines are later in time within one listing; across listings the
    // deeper listing wins ties by arriving later.
    let pick = |cands: Vec<&Entry>| -> Option<u64> {
        let mut best: Option<(&Entry, usize)> = None;
        for e in cands {
            let s = score(e);
            let better = match best {
                None => true,
                Some((b, bs)) => s > bs || (s == bs && if earliest { e.order < b.order } else { e.order > b.order }),
            };
            if better {
                best = Some((e, s));
            }
        }
        best.and_then(|(e, _)| e.id)
    };

    let full_scenes: Vec<&Entry> = seen.iter().filter(|e| e.scene && score(e) >= full).collect();
    if !full_scenes.is_empty() {
        let mut ordered = full_scenes;
        ordered.sort_by_key(|e| e.order);
        let e = if earliest { ordered[0] } else { ordered[ordered.len() - 1] };
        return format!("answer({})", describe_scene(e));
    }

    let open = |min: usize| -> Vec<&Entry> {
        seen.iter()
            .filter(|e| e.expandable && e.id.is_some_and(|id| !expanded.contains(&id)) && score(e) >= min)
            .collect()
    };
    if let Some(id) = pick(open(full)) {
        return format!("expand({id})");
    }
    if let Some(id) = pick(open(1)) {
        return format!("expand({id})");
    }
    if last_obs.iter().any(|e| e.id.is_none()) {
        return "answer(There is no record of that any more; those details were forgotten.)".into();
    }
    if !searched && !keywords.is_empty() {
        return format!("search({})", keywords.iter().cloned().collect::<Vec<_>>().join(" "));
    }
    "answer(I don't know.)".into()
}

fn describe_scene(e: &Entry) -> String {
    let at = e.head.trim().strip_prefix("scene").unwrap_or(e.head).trim();
    let location = e
        .body
        .split("; ")
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == "location")
        .map(|(_, v)| v);
    match location {
        Some(loc) => format!("At {at} at {loc}: {}", e.body),
        None => format!("At {at}: {}", e.body),
    }
}

fn route(human: &str) -> String {
    let utterance = human
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix(UTTERANCE_ANCHOR))
        .unwrap_or("")
        .trim();
    let toks = tokenize(utterance);
    let first = toks.first().map(String::as_str).unwrap_or("");
    let is_question = utterance.ends_with('?')
        || matches!(first, "when" | "where" | "what" | "which" | "who" | "how" | "did" | "do" | "have" | "was" | "were");
    let q = utterance.replace('\'', "’");
    if is_question {
        return format!("answer_question_about_my_past('{q}')");
    }
    let feedbackish = toks.iter().any(|t| matches!(t.as_str(), "remember" | "forget" | "forgot" | "important" | "keep"));
    if feedbackish {
        return format!("handle_forgetting_feedback('{q}')");
    }
    "reply('Hello! Ask me anything about what I did.')".into()
}

fn judge(human: &str) -> String {
    let line = |key: &str| {
        human
            .lines()
            .find_map(|l| l.strip_prefix(key))
            .unwrap_or("")
            .trim()
            .to_string()
    };
    let grade = heuristic_grade(&line("Reference:"), &line("Answer:"));
    match grade {
        JudgeCategory::Correct => "correct",
        JudgeCategory::Partial => "partial",
        JudgeCategory::Wrong => "wrong",
    }
    .into()
}

/// Full `YYYY/MM/DD[,] HH:MM[:SS]` stamps, in seconds.
fn stamps(s: &str) -> Vec<i64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(\d{4})/(\d{2})/(\d{2}),? (\d{2}):(\d{2})(?::(\d{2}))?").unwrap());
    re.captures_iter(s)
        .filter_map(|c| {
            let sec = c.get(6).map_or(Some(0), |m| m.as_str().parse().ok())?;
            let t = crate::time::Timestamp::from_ymd_hms(
                c[1].parse().ok()?,
                c[2].parse().ok()?,
                c[3].parse().ok()?,
                c[4].parse().ok()?,
                c[5].parse().ok()?,
                sec,
            )?;
            Some(t.secs())
        })
        .collect()
}

/// Bare `HH:MM` clock times, as seconds into the day.
fn clock_times(s: &str) -> Vec<i64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\b(\d{1,2}):(\d{2})\b").unwrap());
    re.captures_iter(s)
        .filter_map(|c| {
            let h: i64 = c[1].parse().ok()?;
            let m: i64 = c[2].parse().ok()?;
            (h < 24 && m < 60).then_some(h * 3600 + m * 60)
        })
        .collect()
}

/// Largest distance between a reference time and an answer still counted as
/// correct.
pub const TIME_TOLERANCE_SECS: i64 = 120;

/// Grades without a model. Times within two minutes count as correct and
/// on the same day as partial; otherwise token overlap decides. An answer
/// that gives only a clock time is read on the reference's day.
pub fn heuristic_grade(reference: &str, answer: &str) -> JudgeCategory {
    if let Some(&w) = stamps(reference).first() {
        let day = w.div_euclid(86_400) * 86_400;
        let mut got = stamps(answer);
        if got.is_empty() {
            got = clock_times(answer).into_iter().map(|t| day + t).collect();
        }
        if got.iter().any(|g| (g - w).abs() <= TIME_TOLERANCE_SECS) {
            return JudgeCategory::Correct;
        }
        if got.iter().any(|g| g.div_euclid(86_400) * 86_400 == day) {
            return JudgeCategory::Partial;
        }
        return JudgeCategory::Wrong;
    }
    let r = normalize(reference);
    let a = normalize(answer);
    if r.is_empty() {
        return JudgeCategory::Wrong;
    }
    if a.contains(&r) {
        return JudgeCategory::Correct;
    }
    let rt = token_set(reference);
    let at = token_set(answer);
    let hit = rt.iter().filter(|t| at.contains(*t)).count();
    if hit == rt.len() {
        JudgeCategory::Correct
    } else if hit > 0 {
        JudgeCategory::Partial
    } else {
        JudgeCategory::Wrong
    }
}
