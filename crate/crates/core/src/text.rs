//! Small text helpers shared by the embedder, the memory constructor and the
//! metrics: stop words and frequency-based keyword extraction.

use std::collections::HashMap;

use crate::metrics::normalize_text;

const STOP_WORDS: &[&str] = &[
    "about", "after", "all", "also", "am", "and", "any", "are", "as", "at", "be", "been", "before",
    "being", "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has", "have",
    "he", "her", "here", "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "me", "my", "no", "not", "of", "on", "or", "our", "she", "so", "than", "that", "their",
    "them", "then", "there", "these", "they", "this", "those", "to", "too", "up", "us", "was",
    "we", "were", "what", "when", "where", "which", "who", "whom", "why", "will", "with", "would",
    "you", "your",
];

pub fn is_stop_word(token: &str) -> bool {
    STOP_WORDS.binary_search(&token).is_ok()
}

/// Normalized tokens with stop words removed.
pub fn content_tokens(s: &str) -> Vec<String> {
    normalize_text(s)
        .into_iter()
        .filter(|t| !is_stop_word(t))
        .collect()
}

/// The `limit` most frequent content tokens, ties broken by first occurrence.
pub fn frequency_keywords(s: &str, limit: usize) -> Vec<String> {
    let tokens = content_tokens(s);
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (pos, tok) in tokens.iter().enumerate() {
        counts.entry(tok.as_str()).or_insert((0, pos)).0 += 1;
    }
    let mut ranked: Vec<(&str, usize, usize)> =
        counts.into_iter().map(|(t, (n, first))| (t, n, first)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked
        .into_iter()
        .take(limit)
        .map(|(t, _, _)| t.to_owned())
        .collect()
}
