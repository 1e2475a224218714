//! Corpus loading, validation, splitting, and summary statistics.
//!
//! The canonical on-disk format is JSON-lines: one object per comment-edit
//! pair, UTF-8, keys in the declared field order. CSV imports map columns by
//! header name onto the same fields.

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use thiserror::Error;

use crate::digest::sha256_hex;

/// Validity label for a comment-edit pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Label {
    Valid,
    Invalid,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Valid => write!(f, "Valid"),
            Label::Invalid => write!(f, "Invalid"),
        }
    }
}

impl Label {
    /// Accepts the label spellings found in public exports.
    pub fn parse(value: &str) -> Option<Label> {
        match value.trim().to_lowercase().as_str() {
            "valid" | "yes" | "1" => Some(Label::Valid),
            "invalid" | "no" | "0" => Some(Label::Invalid),
            _ => None,
        }
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Str(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Int(1) => Ok(Label::Valid),
            Repr::Int(0) => Ok(Label::Invalid),
            Repr::Int(other) => Err(D::Error::custom(format!("unrecognized label {other}"))),
            Repr::Str(s) => {
                Label::parse(&s).ok_or_else(|| D::Error::custom(format!("unrecognized label `{s}`")))
            }
        }
    }
}

/// RFC-3339 timestamps; unparseable values degrade to absent with a warning
/// because public dumps are inconsistent.
mod ts {
    use super::*;
    use chrono::SecondsFormat;

    pub fn serialize<S: Serializer>(
        value: &Option<DateTime<Utc>>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        match value {
            Some(dt) => serializer.serialize_str(&dt.to_rfc3339_opts(SecondsFormat::AutoSi, true)),
            None => serializer.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<Option<DateTime<Utc>>, D::Error> {
        let raw: Option<String> = Option::deserialize(deserializer)?;
        Ok(raw.and_then(|s| match DateTime::parse_from_rfc3339(&s) {
            Ok(dt) => Some(dt.with_timezone(&Utc)),
            Err(err) => {
                log::warn!("dropping unparseable timestamp `{s}`: {err}");
                None
            }
        }))
    }
}

/// One (comment, code_before, code_after, label?) instance; the unit of
/// prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentEditPair {
    pub pair_id: String,
    #[serde(default)]
    pub post_id: String,
    pub comment_text: String,
    pub code_before: String,
    /// May be empty for corpora lacking the post-edit snippet.
    #[serde(default)]
    pub code_after: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, with = "ts", skip_serializing_if = "Option::is_none")]
    pub comment_time: Option<DateTime<Utc>>,
    #[serde(default, with = "ts", skip_serializing_if = "Option::is_none")]
    pub edit_time: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commenter_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub editor_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_tag: Option<String>,
    /// Optional per-record split tag (train/validation/test) so published
    /// splits can be reproduced exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

impl CommentEditPair {
    /// Minimal constructor for tests and synthetic corpora.
    pub fn new(pair_id: &str, comment: &str, before: &str, after: &str) -> Self {
        CommentEditPair {
            pair_id: pair_id.to_string(),
            post_id: String::new(),
            comment_text: comment.to_string(),
            code_before: before.to_string(),
            code_after: after.to_string(),
            label: None,
            comment_time: None,
            edit_time: None,
            commenter_id: None,
            editor_id: None,
            language_tag: None,
            split: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    /// Invariant check shared by both loaders.
    fn validate(&self) -> Result<(), String> {
        if self.comment_text.trim().is_empty() {
            return Err("comment_text is empty".to_string());
        }
        if self.code_before.is_empty() {
            return Err("code_before is empty".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    JsonLines,
    Csv,
}

impl CorpusFormat {
    /// Guess from a file extension; JSON-lines when unknown.
    pub fn from_path(path: &Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::JsonLines,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate pair_id `{0}`")]
    DuplicateId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("split ratios must sum to 1.0, got {0}")]
    RatioSum(f64),
    #[error("unknown split tag `{tag}` on pair `{pair_id}`")]
    UnknownSplitTag { pair_id: String, tag: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Loads a corpus file, preserving record order and rejecting duplicates.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<CommentEditPair>, CorpusError> {
    let content = std::fs::read_to_string(path)?;
    let pairs = match format {
        CorpusFormat::JsonLines => parse_json_lines(&content)?,
        CorpusFormat::Csv => parse_csv(&content)?,
    };
    if pairs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut seen = HashSet::new();
    for pair in &pairs {
        if !seen.insert(pair.pair_id.clone()) {
            return Err(CorpusError::DuplicateId(pair.pair_id.clone()));
        }
    }
    Ok(pairs)
}

fn parse_json_lines(content: &str) -> Result<Vec<CommentEditPair>, CorpusError> {
    let mut pairs = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: CommentEditPair =
            serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        pair.validate().map_err(|reason| CorpusError::MalformedRecord {
            line: idx + 1,
            reason,
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

fn parse_csv(content: &str) -> Result<Vec<CommentEditPair>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::MalformedRecord {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    // Optional fields whose empty cells mean "absent" rather than "".
    const OPTIONAL: &[&str] = &[
        "label",
        "comment_time",
        "edit_time",
        "commenter_id",
        "editor_id",
        "language_tag",
        "split",
    ];
    let mut pairs = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header occupies line 1
        let record = record.map_err(|e| CorpusError::MalformedRecord {
            line,
            reason: e.to_string(),
        })?;
        let mut obj = serde_json::Map::new();
        for (header, value) in headers.iter().zip(record.iter()) {
            if OPTIONAL.contains(&header) && value.is_empty() {
                continue;
            }
            obj.insert(header.to_string(), serde_json::Value::String(value.to_string()));
        }
        let pair: CommentEditPair = serde_json::from_value(serde_json::Value::Object(obj))
            .map_err(|e| CorpusError::MalformedRecord {
                line,
                reason: e.to_string(),
            })?;
        pair.validate()
            .map_err(|reason| CorpusError::MalformedRecord { line, reason })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Canonical JSON-lines serialization (one compact object per line, keys in
/// declared field order, trailing newline).
pub fn canonical_jsonl(pairs: &[CommentEditPair]) -> String {
    let mut out = String::new();
    for pair in pairs {
        out.push_str(&serde_json::to_string(pair).expect("pair serializes"));
        out.push('\n');
    }
    out
}

/// Writes the canonical JSON-lines form.
pub fn save_corpus(pairs: &[CommentEditPair], path: &Path) -> Result<(), CorpusError> {
    std::fs::write(path, canonical_jsonl(pairs))?;
    Ok(())
}

/// SHA-256 of the canonical serialization; keys rulesets, indexes, and run
/// manifests to their source corpus.
pub fn corpus_digest(pairs: &[CommentEditPair]) -> String {
    sha256_hex(canonical_jsonl(pairs).as_bytes())
}

/// How to partition a corpus.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    /// Deterministic shuffled partition by ratio.
    Ratios {
        train: f64,
        validation: f64,
        test: f64,
        seed: u64,
    },
    /// Honor each record's `split` tag.
    Field,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<CommentEditPair>,
    pub validation: Vec<CommentEditPair>,
    pub test: Vec<CommentEditPair>,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

/// Partitions pairs into train/validation/test.
///
/// Ratio mode shuffles with a seeded generator and allocates
/// floor(n*r_train) / floor(n*r_val) / remainder; field mode reproduces
/// published splits exactly from per-record tags.
pub fn split_corpus(pairs: &[CommentEditPair], spec: &SplitSpec) -> Result<DatasetSplit, CorpusError> {
    match spec {
        SplitSpec::Ratios {
            train,
            validation,
            test,
            seed,
        } => {
            let sum = train + validation + test;
            if (sum - 1.0).abs() > 1e-9 {
                return Err(CorpusError::RatioSum(sum));
            }
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            order.shuffle(&mut rng);
            let n = pairs.len();
            let n_train = (n as f64 * train).floor() as usize;
            let n_val = (n as f64 * validation).floor() as usize;
            let mut split = DatasetSplit::default();
            for (rank, idx) in order.into_iter().enumerate() {
                let pair = pairs[idx].clone();
                if rank < n_train {
                    split.train.push(pair);
                } else if rank < n_train + n_val {
                    split.validation.push(pair);
                } else {
                    split.test.push(pair);
                }
            }
            Ok(split)
        }
        SplitSpec::Field => {
            let mut split = DatasetSplit::default();
            for pair in pairs {
                let tag = pair.split.as_deref().unwrap_or("");
                match tag {
                    "train" => split.train.push(pair.clone()),
                    "validation" => split.validation.push(pair.clone()),
                    "test" => split.test.push(pair.clone()),
                    other => {
                        return Err(CorpusError::UnknownSplitTag {
                            pair_id: pair.pair_id.clone(),
                            tag: other.to_string(),
                        })
                    }
                }
            }
            Ok(split)
        }
    }
}

/// Label distribution summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub valid: usize,
    pub invalid: usize,
    pub unlabeled: usize,
    pub valid_ratio: f64,
}

pub fn corpus_stats(pairs: &[CommentEditPair]) -> CorpusStats {
    let valid = pairs.iter().filter(|p| p.label == Some(Label::Valid)).count();
    let invalid = pairs.iter().filter(|p| p.label == Some(Label::Invalid)).count();
    let labeled = valid + invalid;
    CorpusStats {
        total: pairs.len(),
        valid,
        invalid,
        unlabeled: pairs.len() - labeled,
        valid_ratio: if labeled == 0 {
            0.0
        } else {
            valid as f64 / labeled as f64
        },
    }
}
