//! Line diffing and lexical-overlap utilities.
//!
//! Shared by the heuristic comment-edit matcher, the engineered-feature
//! extractor, and the machine-checkable reflection rules. Diffing is
//! line-granular: an LCS alignment over lines, preferring earlier matches.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

/// Function-word list filtered out of comment tokens before overlap scoring.
/// Shipped as a data file so scores are reproducible.
const STOPWORDS_RAW: &str = include_str!("../assets/stopwords.txt");

fn stopwords() -> &'static BTreeSet<String> {
    static SET: OnceLock<BTreeSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_RAW
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect()
    })
}

/// Line-level difference between two texts.
///
/// Indices are strictly increasing within each list; a line that is part of
/// the LCS alignment appears in neither list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LineDiff {
    /// Lines present only in the after text, as (index-in-after, text).
    pub added_lines: Vec<(usize, String)>,
    /// Lines present only in the before text, as (index-in-before, text).
    pub removed_lines: Vec<(usize, String)>,
}

impl LineDiff {
    pub fn is_empty(&self) -> bool {
        self.added_lines.is_empty() && self.removed_lines.is_empty()
    }
}

/// Multisets of code tokens added and removed by a diff.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenDelta {
    pub added_tokens: BTreeMap<String, usize>,
    pub removed_tokens: BTreeMap<String, usize>,
}

impl TokenDelta {
    pub fn is_empty(&self) -> bool {
        self.added_tokens.is_empty() && self.removed_tokens.is_empty()
    }

    /// True when the exact token appears in either multiset.
    pub fn contains_token(&self, token: &str) -> bool {
        self.added_tokens.contains_key(token) || self.removed_tokens.contains_key(token)
    }

    /// Distinct lowercased tokens across added and removed.
    pub fn distinct_tokens_lower(&self) -> BTreeSet<String> {
        self.added_tokens
            .keys()
            .chain(self.removed_tokens.keys())
            .map(|t| t.to_lowercase())
            .collect()
    }
}

/// Overlap between a comment's content tokens and a token delta.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OverlapScore {
    /// Number of distinct comment content tokens found in the delta.
    pub count: usize,
    /// count / number of distinct content tokens, 0 when the comment has none.
    pub ratio: f64,
}

fn normalize_newlines(text: &str) -> String {
    text.replace("\r\n", "\n").replace('\r', "\n")
}

fn split_lines(text: &str) -> Vec<&str> {
    text.lines().collect()
}

/// LCS-based line diff after normalizing line endings to LF.
///
/// Ties between competing alignments are broken toward matching earlier
/// lines, and removals are emitted before additions at the same cursor.
pub fn line_diff(before: &str, after: &str) -> LineDiff {
    let before = normalize_newlines(before);
    let after = normalize_newlines(after);
    let a = split_lines(&before);
    let b = split_lines(&after);
    let n = a.len();
    let m = b.len();

    // Suffix LCS lengths: lcs[i][j] = LCS of a[i..] and b[j..].
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a[i] == b[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }

    let mut removed = Vec::new();
    let mut added = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        if a[i] == b[j] {
            i += 1;
            j += 1;
        } else if lcs[i + 1][j] >= lcs[i][j + 1] {
            removed.push((i, a[i].to_string()));
            i += 1;
        } else {
            added.push((j, b[j].to_string()));
            j += 1;
        }
    }
    while i < n {
        removed.push((i, a[i].to_string()));
        i += 1;
    }
    while j < m {
        added.push((j, b[j].to_string()));
        j += 1;
    }

    LineDiff {
        added_lines: added,
        removed_lines: removed,
    }
}

/// Code-token scan: maximal identifier runs (`[A-Za-z_][A-Za-z0-9_]*`) plus
/// maximal digit runs; everything else separates tokens.
pub fn tokenize_code(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        } else {
            i += 1;
        }
    }
    tokens
}

/// Token multisets for the added and removed sides of a line diff.
pub fn token_delta(diff: &LineDiff) -> TokenDelta {
    let mut delta = TokenDelta::default();
    for (_, line) in &diff.added_lines {
        for tok in tokenize_code(line) {
            *delta.added_tokens.entry(tok).or_insert(0) += 1;
        }
    }
    for (_, line) in &diff.removed_lines {
        for tok in tokenize_code(line) {
            *delta.removed_tokens.entry(tok).or_insert(0) += 1;
        }
    }
    delta
}

/// Distinct content tokens of a comment: code tokens minus stopwords,
/// deduplicated case-insensitively (insertion order preserved).
fn content_tokens(comment: &str) -> Vec<String> {
    let stop = stopwords();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for tok in tokenize_code(comment) {
        let lower = tok.to_lowercase();
        if stop.contains(&lower) {
            continue;
        }
        if seen.insert(lower.clone()) {
            out.push(lower);
        }
    }
    out
}

/// Case-insensitive overlap between comment content tokens and the delta's
/// distinct tokens (added and removed pooled).
pub fn lexical_overlap(comment: &str, delta: &TokenDelta) -> OverlapScore {
    let content = content_tokens(comment);
    if content.is_empty() {
        return OverlapScore { count: 0, ratio: 0.0 };
    }
    let delta_tokens = delta.distinct_tokens_lower();
    let count = content.iter().filter(|t| delta_tokens.contains(*t)).count();
    OverlapScore {
        count,
        ratio: count as f64 / content.len() as f64,
    }
}
