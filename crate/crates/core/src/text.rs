//! Tokenization and set-similarity helpers shared by KnRS and CnLE.

use std::collections::BTreeSet;

/// Splits `s` into lowercase tokens on non-alphanumeric boundaries,
/// discarding tokens shorter than 2 characters.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(|t| t.to_lowercase())
        .collect()
}

/// The set of distinct tokens of `s` under [`tokenize`].
pub fn token_set(s: &str) -> BTreeSet<String> {
    tokenize(s).into_iter().collect()
}

/// Jaccard overlap |a ∩ b| / |a ∪ b|; 0.0 when both sets are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Keeps the first `cap` whitespace-separated tokens of `title`.
pub fn truncate_title(title: &str, cap: usize) -> String {
    let mut out = String::new();
    for (i, tok) in title.split_whitespace().enumerate() {
        if i >= cap {
            break;
        }
        if i > 0 {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}
