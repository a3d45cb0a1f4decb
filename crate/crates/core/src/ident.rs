//! Deterministic code-identifier tokenization shared by grounding and
//! follow-up alignment checks.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

static IDENT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").expect("valid identifier regex"));

// Prose words that would otherwise make every sentence "mention" every other.
const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "can", "do", "does", "for", "from", "how", "i", "if", "in", "is",
    "it", "its", "me", "my", "of", "on", "or", "so", "that", "the", "then", "this", "to", "was", "what", "when",
    "where", "which", "why", "with", "you", "your",
];

pub fn identifiers(text: &str) -> BTreeSet<String> {
    IDENT
        .find_iter(text)
        .map(|m| m.as_str())
        .filter(|w| !STOPWORDS.contains(&w.to_ascii_lowercase().as_str()))
        .map(str::to_string)
        .collect()
}

/// Every identifier-shaped token, stopwords included.
pub fn tokens(text: &str) -> BTreeSet<String> {
    IDENT.find_iter(text).map(|m| m.as_str().to_string()).collect()
}

pub fn is_identifier(text: &str) -> bool {
    IDENT
        .find(text)
        .is_some_and(|m| m.start() == 0 && m.end() == text.len())
}

/// Identifiers quoted in backticks, in order of appearance.
pub fn backticked(text: &str) -> Vec<String> {
    text.split('`')
        .skip(1)
        .step_by(2)
        .filter(|s| is_identifier(s))
        .map(str::to_string)
        .collect()
}
