//! Classification and post-update metrics.
//!
//! Per-class precision/recall/F1 with Valid as the positive class, Cohen's
//! kappa for rater agreement, and APU scoring via exact match and BLEU-4
//! with add-one smoothing on orders 2-4 (so identical texts score exactly 1).

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

use crate::corpus::Label;
use crate::gateway::Verdict;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("inputs must be non-empty")]
    EmptyInput,
}

/// Binary confusion counts; Valid is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(predictions: &[Verdict], labels: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (pred, label) in predictions.iter().zip(labels) {
        match (pred.decision, label) {
            (Label::Valid, Label::Valid) => cm.tp += 1,
            (Label::Valid, Label::Invalid) => cm.fp += 1,
            (Label::Invalid, Label::Valid) => cm.fn_ += 1,
            (Label::Invalid, Label::Invalid) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Precision/recall/F1 for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Two-sided report: the Valid class and its Invalid mirror.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub valid: ClassMetrics,
    pub invalid: ClassMetrics,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn class_report(cm: &ConfusionMatrix) -> ClassReport {
    let valid_p = ratio(cm.tp, cm.tp + cm.fp);
    let valid_r = ratio(cm.tp, cm.tp + cm.fn_);
    let invalid_p = ratio(cm.tn, cm.tn + cm.fn_);
    let invalid_r = ratio(cm.tn, cm.tn + cm.fp);
    ClassReport {
        valid: ClassMetrics {
            precision: valid_p,
            recall: valid_r,
            f1: f1_score(valid_p, valid_r),
            support: cm.tp + cm.fn_,
        },
        invalid: ClassMetrics {
            precision: invalid_p,
            recall: invalid_r,
            f1: f1_score(invalid_p, invalid_r),
            support: cm.tn + cm.fp,
        },
    }
}

/// Chance-corrected agreement between two label sequences.
pub fn cohen_kappa(a: &[Label], b: &[Label]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let p_o = agree / n;
    let a_valid = a.iter().filter(|l| **l == Label::Valid).count() as f64;
    let b_valid = b.iter().filter(|l| **l == Label::Valid).count() as f64;
    let p_e = (a_valid / n) * (b_valid / n) + ((n - a_valid) / n) * ((n - b_valid) / n);
    if (1.0 - p_e).abs() < 1e-15 {
        // Both raters constant and identical: total agreement.
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Normalization applied before exact-match and BLEU tokenization: CRLF to
/// LF, trailing whitespace stripped per line, leading/trailing blank lines
/// dropped. Nothing else changes.
pub fn normalize_for_match(text: &str) -> String {
    let unified = text.replace("\r\n", "\n").replace('\r', "\n");
    let lines: Vec<&str> = unified.split('\n').map(|l| l.trim_end()).collect();
    let first = lines.iter().position(|l| !l.is_empty());
    let last = lines.iter().rposition(|l| !l.is_empty());
    match (first, last) {
        (Some(first), Some(last)) => lines[first..=last].join("\n"),
        _ => String::new(),
    }
}

pub fn exact_match(candidate: &str, reference: &str) -> bool {
    normalize_for_match(candidate) == normalize_for_match(reference)
}

fn ngram_counts(tokens: &[&str], n: usize) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    if tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        *counts.entry(window.join("\u{1f}")).or_insert(0) += 1;
    }
    counts
}

fn clipped_matches(cand: &HashMap<String, usize>, refr: &HashMap<String, usize>) -> usize {
    cand.iter()
        .map(|(gram, count)| (*count).min(refr.get(gram).copied().unwrap_or(0)))
        .sum()
}

/// BLEU-4 with add-one smoothing on orders 2-4 plus the standard brevity
/// penalty. Tokenization is whitespace splitting after match normalization.
pub fn bleu4_addone(candidate: &str, reference: &str) -> f64 {
    let cand_text = normalize_for_match(candidate);
    let ref_text = normalize_for_match(reference);
    let cand: Vec<&str> = cand_text.split_whitespace().collect();
    let refr: Vec<&str> = ref_text.split_whitespace().collect();
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let total = cand.len().saturating_sub(n - 1);
        let matched = clipped_matches(&ngram_counts(&cand, n), &ngram_counts(&refr, n));
        let (num, den) = if n == 1 {
            (matched as f64, total as f64)
        } else {
            (matched as f64 + 1.0, total as f64 + 1.0)
        };
        if num == 0.0 {
            return 0.0;
        }
        log_sum += 0.25 * (num / den).ln();
    }
    let c = cand.len() as f64;
    let r = refr.len() as f64;
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * log_sum.exp()
}

/// Corpus-counts BLEU variant: n-gram statistics pooled over all instances
/// before smoothing, with a corpus-level brevity penalty.
pub fn bleu4_addone_corpus(instances: &[(&str, &str)]) -> f64 {
    let mut totals = [0usize; 4];
    let mut matches = [0usize; 4];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (candidate, reference) in instances {
        let cand_text = normalize_for_match(candidate);
        let ref_text = normalize_for_match(reference);
        let cand: Vec<&str> = cand_text.split_whitespace().collect();
        let refr: Vec<&str> = ref_text.split_whitespace().collect();
        cand_len += cand.len();
        ref_len += refr.len();
        for n in 1..=4 {
            totals[n - 1] += cand.len().saturating_sub(n - 1);
            matches[n - 1] += clipped_matches(&ngram_counts(&cand, n), &ngram_counts(&refr, n));
        }
    }
    if cand_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (num, den) = if n == 1 {
            (matches[0] as f64, totals[0] as f64)
        } else {
            (matches[n - 1] as f64 + 1.0, totals[n - 1] as f64 + 1.0)
        };
        if num == 0.0 {
            return 0.0;
        }
        log_sum += 0.25 * (num / den).ln();
    }
    let c = cand_len as f64;
    let r = ref_len as f64;
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * log_sum.exp()
}

/// Per-instance APU result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApuInstance {
    pub pair_id: String,
    pub em: bool,
    pub bleu: f64,
}

/// Aggregate APU score: exact-match rate and mean sentence-level BLEU.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApuScore {
    pub em_rate: f64,
    pub bleu4: f64,
    pub records: Vec<ApuInstance>,
}

impl ApuScore {
    pub fn from_instances(records: Vec<ApuInstance>) -> ApuScore {
        let n = records.len();
        if n == 0 {
            return ApuScore {
                em_rate: 0.0,
                bleu4: 0.0,
                records,
            };
        }
        let em = records.iter().filter(|r| r.em).count();
        let bleu_sum: f64 = records.iter().map(|r| r.bleu).sum();
        ApuScore {
            em_rate: em as f64 / n as f64,
            bleu4: bleu_sum / n as f64,
            records,
        }
    }
}
