//! Parsers for the structured parts of model replies.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::PromptKind;
use crate::tree::NodeId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("reply has no {0}")]
    Missing(&'static str),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
}

/// One group: items `from` (oldest) down to `to` (newest), inclusive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupingDirective {
    pub from: usize,
    pub to: usize,
    pub summary: String,
}

impl GroupingDirective {
    pub fn contains(&self, idx: usize) -> bool {
        self.to <= idx && idx <= self.from
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelevanceScore {
    Finite(u32),
    Infinite,
}

impl RelevanceScore {
    pub const MAX_FINITE: u32 = 100;

    pub fn finite(v: i64) -> Self {
        RelevanceScore::Finite(v.clamp(0, Self::MAX_FINITE as i64) as u32)
    }

    pub fn is_zero(self) -> bool {
        self == RelevanceScore::Finite(0)
    }
}

impl fmt::Display for RelevanceScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelevanceScore::Finite(v) => write!(f, "{v}"),
            RelevanceScore::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "arg", rename_all = "lowercase")]
pub enum AgentAction {
    Expand(NodeId),
    Search(String),
    Answer(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    Question(String),
    Feedback(String),
    Direct(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeCategory {
    Correct,
    Partial,
    Wrong,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Parsed {
    Grouping(Vec<GroupingDirective>),
    Relevance(RelevanceScore),
    Rules(Vec<String>),
    Action(AgentAction),
    Route(Route),
    Judge(JudgeCategory),
    Summary(String),
}

pub fn parse_structured(kind: PromptKind, text: &str) -> Result<Parsed, ParseError> {
    Ok(match kind {
        PromptKind::Grouping => Parsed::Grouping(parse_grouping(text)?),
        PromptKind::RelevanceEstimation => Parsed::Relevance(parse_relevance(text)?),
        PromptKind::RuleLearning => Parsed::Rules(parse_rules(text)?),
        PromptKind::QaAgent => Parsed::Action(parse_action(text)?),
        PromptKind::DialogRouting => Parsed::Route(parse_route(text)),
        PromptKind::Judge => Parsed::Judge(parse_judge(text)?),
        PromptKind::SimpleSummarize => Parsed::Summary(parse_summary(text)?),
    })
}

fn json_object(text: &str) -> Option<&str> {
    let body = match text.rfind("JSON:") {
        Some(i) => &text[i + 5..],
        None => text,
    };
    let start = body.find('{')?;
    let end = body.rfind('}')?;
    (end > start).then(|| &body[start..=end])
}

fn parse_index(s: &str) -> Result<usize, ParseError> {
    s.trim().parse().map_err(|_| ParseError::Malformed { what: "item range", detail: s.to_string() })
}

pub fn parse_grouping(text: &str) -> Result<Vec<GroupingDirective>, ParseError> {
    let obj = json_object(text).ok_or(ParseError::Missing("JSON object"))?;
    let map: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(obj).map_err(|e| ParseError::Malformed { what: "JSON object", detail: e.to_string() })?;
    let mut out = Vec::with_capacity(map.len());
    for (key, value) in map {
        let key = key.replace('–', "-");
        let (a, b) = match key.split_once('-') {
            Some((a, b)) => (parse_index(a)?, parse_index(b)?),
            None => {
                let i = parse_index(&key)?;
                (i, i)
            }
        };
        let summary = match value {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        out.push(GroupingDirective { from: a.max(b), to: a.min(b), summary: summary.trim().to_string() });
    }
    if out.is_empty() {
        return Err(ParseError::Missing("groups"));
    }
    out.sort_by(|x, y| y.from.cmp(&x.from));
    Ok(out)
}

pub fn parse_relevance(text: &str) -> Result<RelevanceScore, ParseError> {
    let line = text
        .lines()
        .rev()
        .find_map(|l| {
            let l = l.trim();
            let lower = l.to_ascii_lowercase();
            lower.find("relevance:").map(|i| l[i + "relevance:".len()..].trim().to_string())
        })
        .ok_or(ParseError::Missing("relevance line"))?;
    let lower = line.to_ascii_lowercase();
    let lower = lower.trim_matches(|c: char| c == '*' || c == '`' || c == '"' || c.is_whitespace());
    if lower.starts_with("inf") || lower.starts_with('∞') {
        return Ok(RelevanceScore::Infinite);
    }
    let numeric: String = lower
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == '.' || *c == '-' || *c == '+')
        .collect();
    let v: f64 = numeric
        .parse()
        .map_err(|_| ParseError::Malformed { what: "relevance", detail: line.clone() })?;
    if !v.is_finite() {
        return Ok(RelevanceScore::Infinite);
    }
    Ok(RelevanceScore::finite(v.round() as i64))
}

/// Numbered lines (`1. ...` or `1) ...`); anything else is ignored.
pub fn parse_rules(text: &str) -> Result<Vec<String>, ParseError> {
    let rules: Vec<String> = text
        .lines()
        .filter_map(|l| {
            let l = l.trim();
            let digits = l.chars().take_while(char::is_ascii_digit).count();
            if digits == 0 {
                return None;
            }
            let rest = l[digits..].strip_prefix(['.', ')'])?;
            let rest = rest.trim();
            (!rest.is_empty()).then(|| rest.to_string())
        })
        .collect();
    if rules.is_empty() {
        return Err(ParseError::Missing("numbered rules"));
    }
    Ok(rules)
}

/// Argument of the first `name(...)` call in `text`, up to the last closing
/// parenthesis. Quotes around the argument are removed.
fn call_argument<'a>(text: &'a str, name: &str) -> Option<(usize, &'a str)> {
    let pat = format!("{name}(");
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find(&pat) {
        let pos = search_from + rel;
        let boundary = text[..pos].chars().next_back().is_none_or(|c| !c.is_alphanumeric() && c != '_');
        if boundary {
            let body = &text[pos + pat.len()..];
            let end = body.rfind(')').unwrap_or(body.len());
            return Some((pos, unquote(body[..end].trim())));
        }
        search_from = pos + pat.len();
    }
    None
}

fn unquote(s: &str) -> &str {
    for q in ['\'', '"'] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return &s[1..s.len() - 1];
        }
    }
    s
}

pub fn parse_action(text: &str) -> Result<AgentAction, ParseError> {
    let mut found: Vec<(usize, AgentAction)> = Vec::new();
    if let Some((pos, arg)) = call_argument(text, "expand") {
        let digits: String = arg.chars().filter(char::is_ascii_digit).collect();
        match digits.parse() {
            Ok(id) => found.push((pos, AgentAction::Expand(NodeId(id)))),
            Err(_) => return Err(ParseError::Malformed { what: "expand argument", detail: arg.to_string() }),
        }
    }
    if let Some((pos, arg)) = call_argument(text, "search") {
        found.push((pos, AgentAction::Search(arg.to_string())));
    }
    if let Some((pos, arg)) = call_argument(text, "answer") {
        found.push((pos, AgentAction::Answer(arg.to_string())));
    }
    found.sort_by_key(|(p, _)| *p);
    found.into_iter().next().map(|(_, a)| a).ok_or(ParseError::Missing("action"))
}

pub fn parse_route(text: &str) -> Route {
    let mut found: Vec<(usize, Route)> = Vec::new();
    if let Some((pos, arg)) = call_argument(text, "answer_question_about_my_past") {
        found.push((pos, Route::Question(arg.to_string())));
    }
    if let Some((pos, arg)) = call_argument(text, "handle_forgetting_feedback") {
        found.push((pos, Route::Feedback(arg.to_string())));
    }
    if let Some((pos, arg)) = call_argument(text, "reply") {
        found.push((pos, Route::Direct(arg.to_string())));
    }
    found.sort_by_key(|(p, _)| *p);
    found
        .into_iter()
        .next()
        .map(|(_, r)| r)
        .unwrap_or_else(|| Route::Direct(text.trim().to_string()))
}

pub fn parse_judge(text: &str) -> Result<JudgeCategory, ParseError> {
    crate::text::tokenize(text)
        .iter()
        .find_map(|t| match t.as_str() {
            "correct" => Some(JudgeCategory::Correct),
            "partial" | "partially" => Some(JudgeCategory::Partial),
            "wrong" | "incorrect" => Some(JudgeCategory::Wrong),
            _ => None,
        })
        .ok_or(ParseError::Missing("grade"))
}

pub fn parse_summary(text: &str) -> Result<String, ParseError> {
    let body = match text.find("Summary:") {
        Some(i) => &text[i + "Summary:".len()..],
        None => text,
    };
    let body = body.trim();
    if body.is_empty() {
        return Err(ParseError::Missing("summary"));
    }
    Ok(body.to_string())
}
