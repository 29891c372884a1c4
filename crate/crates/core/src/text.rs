//! Small text helpers shared by the scripted backend, search and the judge.

use std::collections::BTreeSet;

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "always", "an", "and", "any", "are", "as", "at", "be", "been", "before",
    "but", "by", "can", "could", "did", "do", "does", "done", "each", "ever", "exact", "exactly", "for", "forget",
    "from", "had", "has", "have", "how", "i", "if", "important", "in", "into", "is", "it", "its", "keep", "last",
    "me", "my", "never", "no", "not", "of", "on", "or", "record", "remember", "retain", "should", "so", "some",
    "that", "the", "their", "them", "then", "there", "these", "this", "time", "to", "until", "up", "was", "were",
    "what", "when", "where", "which", "while", "who", "why", "will", "with", "would", "you", "your", "first",
    "whenever", "ago", "yesterday", "today", "please", "must", "also", "it's", "which", "we", "our",
];

/// Lowercase alphanumeric runs.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn token_set(s: &str) -> BTreeSet<String> {
    tokenize(s).into_iter().collect()
}

pub fn is_stopword(t: &str) -> bool {
    STOPWORDS.contains(&t)
}

/// Distinct tokens that carry meaning: no stopwords, no bare numbers, at
/// least three characters.
pub fn content_words(s: &str) -> BTreeSet<String> {
    tokenize(s)
        .into_iter()
        .filter(|t| t.chars().count() >= 3 && !is_stopword(t) && !t.chars().all(|c| c.is_ascii_digit()))
        .collect()
}

/// Number of whitespace-separated tokens; the unit for all cost accounting.
pub fn whitespace_tokens(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

pub fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or("")
}

pub fn truncate_chars(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Lowercase, alphanumerics and single spaces only.
pub fn normalize(s: &str) -> String {
    tokenize(s).join(" ")
}
