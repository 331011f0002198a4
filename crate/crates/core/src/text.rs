//! Token model shared by graph search, symptom matching, and rule drafting.
//!
//! Deliberately minimal: ASCII lowercasing, split on non-alphanumeric bytes,
//! no stemming. Every scoring and keyword decision in the crate goes through
//! these helpers so that results stay deterministic and easy to reason about.

use std::collections::BTreeSet;

/// Split `text` into lowercase ASCII-alphanumeric tokens.
///
/// Any character outside `[0-9A-Za-z]` acts as a separator, including
/// non-ASCII characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_ascii_alphanumeric() {
            current.push(ch.to_ascii_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Tokenize and deduplicate, preserving nothing but membership.
pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// Count how many distinct tokens of `query` appear in `target`.
pub fn overlap_score(query: &BTreeSet<String>, target: &BTreeSet<String>) -> usize {
    query.iter().filter(|t| target.contains(*t)).count()
}

/// True when the tokens of `keyword` occur as a contiguous run inside
/// `tokens`. A multi-word keyword such as "long-running" therefore matches
/// the token sequence ["long", "running"] but not the words in isolation.
pub fn keyword_matches(keyword: &str, tokens: &[String]) -> bool {
    let needle = tokenize(keyword);
    if needle.is_empty() || needle.len() > tokens.len() {
        return false;
    }
    tokens.windows(needle.len()).any(|w| w == needle.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(
            tokenize("Long-running SQL query: exhausted pool!"),
            vec!["long", "running", "sql", "query", "exhausted", "pool"]
        );
    }

    #[test]
    fn tokenize_treats_non_ascii_as_separator() {
        assert_eq!(tokenize("caf\u{e9} break"), vec!["caf", "break"]);
    }

    #[test]
    fn empty_input_yields_no_tokens() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("---").is_empty());
    }

    #[test]
    fn overlap_counts_distinct_tokens_only() {
        let q = token_set("query query optimization");
        let t = token_set("inefficient query optimization detected");
        assert_eq!(overlap_score(&q, &t), 2);
    }

    #[test]
    fn multiword_keyword_requires_contiguous_run() {
        let tokens = tokenize("a long running sql query");
        assert!(keyword_matches("long-running", &tokens));
        assert!(keyword_matches("sql", &tokens));
        assert!(!keyword_matches("long query", &tokens));
    }
}
