//! Classical baselines: the heuristic comment-edit matcher, the engineered
//! feature extractor, feature standardization, and from-scratch logistic
//! regression with standardized coefficients and standard errors.
//!
//! The feature definitions follow the published cue categories; where the
//! cues name no exact regex, the shipped keyword lists and patterns below
//! are the documented reconstruction.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

use crate::corpus::{CommentEditPair, Label};
use crate::rules::{any_phrase_match, default_fix_words, default_gratitude_words};
use crate::textdiff::{lexical_overlap, line_diff, token_delta, tokenize_code};

const MODAL_WORDS_RAW: &str = include_str!("../assets/keywords/modal_words.txt");
const NEGATIVE_WORDS_RAW: &str = include_str!("../assets/keywords/negative_words.txt");

fn word_list(raw: &str) -> Vec<String> {
    raw.lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

fn modal_words() -> &'static Vec<String> {
    static LIST: OnceLock<Vec<String>> = OnceLock::new();
    LIST.get_or_init(|| word_list(MODAL_WORDS_RAW))
}

fn negative_words() -> &'static Vec<String> {
    static LIST: OnceLock<Vec<String>> = OnceLock::new();
    LIST.get_or_init(|| word_list(NEGATIVE_WORDS_RAW))
}

/// Canonical feature order; column names for CSV export and coefficients.
pub const FEATURE_NAMES: [&str; 25] = [
    "char_count",
    "word_count",
    "sentence_count",
    "avg_sentence_len",
    "lexical_diversity",
    "has_thanks",
    "has_please",
    "has_modal",
    "num_questions",
    "is_question",
    "num_exclaims",
    "contains_fix_words",
    "contains_negative",
    "has_code_ticks",
    "has_identifier_style",
    "has_function_pattern",
    "num_digits",
    "code_like_ratio",
    "ref_tokens",
    "avg_token_len",
    "loc_before",
    "num_functions_before",
    "num_comments_in_code",
    "token_overlap_count",
    "token_overlap_ratio",
];

pub const FEATURE_DIM: usize = FEATURE_NAMES.len();

/// Engineered features over one pair, grouped by cue category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    // Lexical/Length
    pub char_count: f64,
    pub word_count: f64,
    pub sentence_count: f64,
    pub avg_sentence_len: f64,
    pub lexical_diversity: f64,
    // Pragmatics
    pub has_thanks: f64,
    pub has_please: f64,
    pub has_modal: f64,
    pub num_questions: f64,
    pub is_question: f64,
    pub num_exclaims: f64,
    // Action/Error cues
    pub contains_fix_words: f64,
    pub contains_negative: f64,
    // Code-like/References
    pub has_code_ticks: f64,
    pub has_identifier_style: f64,
    pub has_function_pattern: f64,
    pub num_digits: f64,
    pub code_like_ratio: f64,
    pub ref_tokens: f64,
    pub avg_token_len: f64,
    // Structure/Overlap
    pub loc_before: f64,
    pub num_functions_before: f64,
    pub num_comments_in_code: f64,
    pub token_overlap_count: f64,
    pub token_overlap_ratio: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.char_count,
            self.word_count,
            self.sentence_count,
            self.avg_sentence_len,
            self.lexical_diversity,
            self.has_thanks,
            self.has_please,
            self.has_modal,
            self.num_questions,
            self.is_question,
            self.num_exclaims,
            self.contains_fix_words,
            self.contains_negative,
            self.has_code_ticks,
            self.has_identifier_style,
            self.has_function_pattern,
            self.num_digits,
            self.code_like_ratio,
            self.ref_tokens,
            self.avg_token_len,
            self.loc_before,
            self.num_functions_before,
            self.num_comments_in_code,
            self.token_overlap_count,
            self.token_overlap_ratio,
        ]
    }
}

fn bool_feature(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn sentence_count(text: &str) -> usize {
    static BOUNDARY: OnceLock<Regex> = OnceLock::new();
    let boundary = BOUNDARY.get_or_init(|| Regex::new(r"[.!?]+(\s+|$)").expect("sentence pattern"));
    boundary
        .split(text)
        .filter(|s| !s.trim().is_empty())
        .count()
}

fn camel_case_regex() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"\b[a-z][a-z0-9]*[A-Z][A-Za-z0-9]*\b").expect("camel pattern"))
}

fn snake_case_regex() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"\b[A-Za-z][A-Za-z0-9]*_[A-Za-z0-9_]+\b").expect("snake pattern"))
}

fn function_pattern_regex() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*\(").expect("function pattern"))
}

/// A whitespace word counts as code-like when, after trimming sentence
/// punctuation, it carries a code signal: bracket/operator characters, an
/// internal dot, camelCase, or any digit.
fn code_like_word(word: &str) -> bool {
    let trimmed = word.trim_matches(|c: char| ".,;:!?\"'".contains(c));
    if trimmed.is_empty() {
        return false;
    }
    trimmed.chars().any(|c| "`()_=<>[]{}".contains(c))
        || trimmed.contains('.')
        || camel_case_regex().is_match(trimmed)
        || trimmed.chars().any(|c| c.is_ascii_digit())
}

fn normalize_lines(text: &str) -> Vec<&str> {
    text.lines().collect()
}

/// Extracts all engineered features for one pair; pure and independent of
/// corpus order.
pub fn extract_features(pair: &CommentEditPair) -> FeatureVector {
    let comment = pair.comment_text.as_str();
    let words: Vec<&str> = comment.split_whitespace().collect();
    let word_count = words.len();
    let sentences = sentence_count(comment);

    let distinct_words = words
        .iter()
        .map(|w| w.to_lowercase())
        .collect::<std::collections::HashSet<_>>()
        .len();

    let code_before = pair.code_before.replace("\r\n", "\n").replace('\r', "\n");
    let before_lines = normalize_lines(&code_before);
    let comment_markers = ["//", "#", "/*", "--", "* "];
    let comment_lines = before_lines
        .iter()
        .filter(|l| {
            let t = l.trim_start();
            comment_markers.iter().any(|m| t.starts_with(m))
        })
        .count();
    let function_lines = before_lines
        .iter()
        .filter(|l| function_pattern_regex().is_match(l))
        .count();

    let before_tokens: std::collections::HashSet<String> =
        tokenize_code(&pair.code_before).into_iter().collect();
    let ref_tokens = tokenize_code(comment)
        .into_iter()
        .collect::<std::collections::HashSet<_>>()
        .iter()
        .filter(|t| before_tokens.contains(*t))
        .count();

    let delta = token_delta(&line_diff(&pair.code_before, &pair.code_after));
    let overlap = lexical_overlap(comment, &delta);

    let num_questions = comment.chars().filter(|c| *c == '?').count();
    let code_like_words = words.iter().filter(|w| code_like_word(w)).count();

    FeatureVector {
        char_count: comment.chars().count() as f64,
        word_count: word_count as f64,
        sentence_count: sentences as f64,
        avg_sentence_len: if sentences == 0 {
            0.0
        } else {
            word_count as f64 / sentences as f64
        },
        lexical_diversity: if word_count == 0 {
            0.0
        } else {
            distinct_words as f64 / word_count as f64
        },
        has_thanks: bool_feature(any_phrase_match(comment, &default_gratitude_words())),
        has_please: bool_feature(any_phrase_match(comment, &["please".to_string()])),
        has_modal: bool_feature(any_phrase_match(comment, modal_words())),
        num_questions: num_questions as f64,
        is_question: bool_feature(num_questions > 0),
        num_exclaims: comment.chars().filter(|c| *c == '!').count() as f64,
        contains_fix_words: bool_feature(any_phrase_match(comment, &default_fix_words())),
        contains_negative: bool_feature(any_phrase_match(comment, negative_words())),
        has_code_ticks: bool_feature(comment.contains('`')),
        has_identifier_style: bool_feature(
            camel_case_regex().is_match(comment) || snake_case_regex().is_match(comment),
        ),
        has_function_pattern: bool_feature(function_pattern_regex().is_match(comment)),
        num_digits: comment.chars().filter(|c| c.is_ascii_digit()).count() as f64,
        code_like_ratio: if word_count == 0 {
            0.0
        } else {
            code_like_words as f64 / word_count as f64
        },
        ref_tokens: ref_tokens as f64,
        avg_token_len: if word_count == 0 {
            0.0
        } else {
            words.iter().map(|w| w.chars().count()).sum::<usize>() as f64 / word_count as f64
        },
        loc_before: if code_before.is_empty() {
            0.0
        } else {
            before_lines.len() as f64
        },
        num_functions_before: function_lines as f64,
        num_comments_in_code: comment_lines as f64,
        token_overlap_count: overlap.count as f64,
        token_overlap_ratio: overlap.ratio,
    }
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("feature matrix is empty")]
    EmptyMatrix,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("non-finite value encountered during training at iteration {0}")]
    NonFinite(usize),
    #[error("matrix is singular (pivot magnitude {0:.3e})")]
    SingularMatrix(f64),
    #[error("length mismatch: {left} rows vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
}

/// Per-column mean and population standard deviation from the training
/// split; constant columns are flagged and standardized to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub constant: Vec<bool>,
}

pub fn fit_standardizer(x: &[Vec<f64>]) -> Result<StandardizationStats, BaselineError> {
    if x.is_empty() {
        return Err(BaselineError::EmptyMatrix);
    }
    let dim = x[0].len();
    for row in x {
        if row.len() != dim {
            return Err(BaselineError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
    }
    let n = x.len() as f64;
    let mut means = vec![0.0; dim];
    for row in x {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in means.iter_mut() {
        *m /= n;
    }
    let mut stds = vec![0.0; dim];
    for row in x {
        for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    let mut constant = vec![false; dim];
    for (j, s) in stds.iter_mut().enumerate() {
        *s = (*s / n).sqrt();
        if *s == 0.0 {
            constant[j] = true;
            log::warn!("feature column {j} is constant; standardizing to zero");
        }
    }
    Ok(StandardizationStats { means, stds, constant })
}

pub fn apply_standardizer(stats: &StandardizationStats, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BaselineError> {
    let dim = stats.means.len();
    x.iter()
        .map(|row| {
            if row.len() != dim {
                return Err(BaselineError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            Ok(row
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    if stats.constant[j] {
                        0.0
                    } else {
                        (v - stats.means[j]) / stats.stds[j]
                    }
                })
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrHyper {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for LrHyper {
    fn default() -> Self {
        LrHyper {
            learning_rate: 0.1,
            iterations: 2000,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub hyper: LrHyper,
}

/// Model plus the loss trace recorded during fitting.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub model: LogisticModel,
    pub losses: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn linear(weights: &[f64], bias: f64, row: &[f64]) -> f64 {
    weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>() + bias
}

/// Mean L2-regularized negative log-likelihood (bias unregularized).
pub fn logistic_loss(x: &[Vec<f64>], y: &[bool], weights: &[f64], bias: f64, l2: f64) -> f64 {
    let n = x.len() as f64;
    let mut total = 0.0;
    for (row, label) in x.iter().zip(y) {
        let p = sigmoid(linear(weights, bias, row)).clamp(1e-15, 1.0 - 1e-15);
        total -= if *label { p.ln() } else { (1.0 - p).ln() };
    }
    total / n + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of `logistic_loss` in (weights, bias).
pub fn logistic_gradient(
    x: &[Vec<f64>],
    y: &[bool],
    weights: &[f64],
    bias: f64,
    l2: f64,
) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for (row, label) in x.iter().zip(y) {
        let err = sigmoid(linear(weights, bias, row)) - if *label { 1.0 } else { 0.0 };
        for (g, v) in grad_w.iter_mut().zip(row) {
            *g += err * v;
        }
        grad_b += err;
    }
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    (grad_w, grad_b / n)
}

/// Full-batch gradient descent on the regularized log-loss from a zero
/// initialization. The loss trace is recorded before every step.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], hyper: LrHyper) -> Result<LogisticFit, BaselineError> {
    if x.is_empty() {
        return Err(BaselineError::EmptyMatrix);
    }
    if x.len() != y.len() {
        return Err(BaselineError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if y.iter().all(|l| *l) || y.iter().all(|l| !*l) {
        return Err(BaselineError::SingleClass);
    }
    let dim = x[0].len();
    for row in x {
        if row.len() != dim {
            return Err(BaselineError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
    }
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut losses = Vec::with_capacity(hyper.iterations + 1);
    for iteration in 0..hyper.iterations {
        losses.push(logistic_loss(x, y, &weights, bias, hyper.l2));
        let (grad_w, grad_b) = logistic_gradient(x, y, &weights, bias, hyper.l2);
        for (w, g) in weights.iter_mut().zip(&grad_w) {
            *w -= hyper.learning_rate * g;
        }
        bias -= hyper.learning_rate * grad_b;
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(BaselineError::NonFinite(iteration));
        }
    }
    losses.push(logistic_loss(x, y, &weights, bias, hyper.l2));
    Ok(LogisticFit {
        model: LogisticModel { weights, bias, hyper },
        losses,
    })
}

pub fn predict_proba(model: &LogisticModel, row: &[f64]) -> Result<f64, BaselineError> {
    if row.len() != model.weights.len() {
        return Err(BaselineError::DimensionMismatch {
            expected: model.weights.len(),
            got: row.len(),
        });
    }
    Ok(sigmoid(linear(&model.weights, model.bias, row)))
}

/// Probability at or above the threshold maps to Valid.
pub fn classify(model: &LogisticModel, row: &[f64], threshold: f64) -> Result<Label, BaselineError> {
    let p = predict_proba(model, row)?;
    Ok(if p >= threshold { Label::Valid } else { Label::Invalid })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientStat {
    pub name: String,
    pub beta: f64,
    pub se: f64,
}

/// Standardized coefficients with standard errors from the inverse Fisher
/// information (X'WX)^-1, intercept column appended last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientStats {
    pub features: Vec<CoefficientStat>,
    pub intercept: CoefficientStat,
}

/// Gauss-Jordan inverse with partial pivoting; near-zero pivots surface as
/// `SingularMatrix` with the offending magnitude.
fn invert(matrix: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BaselineError> {
    let n = matrix.len();
    let mut aug: Vec<Vec<f64>> = matrix
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut extended = row.clone();
            extended.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            extended
        })
        .collect();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|a, b| aug[*a][col].abs().partial_cmp(&aug[*b][col].abs()).unwrap())
            .unwrap();
        let pivot = aug[pivot_row][col];
        if pivot.abs() < 1e-12 {
            return Err(BaselineError::SingularMatrix(pivot.abs()));
        }
        aug.swap(col, pivot_row);
        let scale = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= scale;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = aug[row][col];
            if factor == 0.0 {
                continue;
            }
            let pivot_vals = aug[col].clone();
            for (value, pivot_val) in aug[row].iter_mut().zip(&pivot_vals) {
                *value -= factor * pivot_val;
            }
        }
    }
    Ok(aug.into_iter().map(|row| row[n..].to_vec()).collect())
}

pub fn coefficient_stats(
    model: &LogisticModel,
    x_standardized: &[Vec<f64>],
) -> Result<CoefficientStats, BaselineError> {
    if x_standardized.is_empty() {
        return Err(BaselineError::EmptyMatrix);
    }
    let d = model.weights.len();
    for row in x_standardized {
        if row.len() != d {
            return Err(BaselineError::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
    }
    // Fisher information over the design matrix with the intercept column
    // appended: A = sum_i w_i * x~_i x~_i', w_i = p_i (1 - p_i).
    let dim = d + 1;
    let mut info = vec![vec![0.0; dim]; dim];
    for row in x_standardized {
        let p = sigmoid(linear(&model.weights, model.bias, row));
        let w = p * (1.0 - p);
        let mut extended = row.clone();
        extended.push(1.0);
        for i in 0..dim {
            for j in 0..dim {
                info[i][j] += w * extended[i] * extended[j];
            }
        }
    }
    let covariance = invert(&info)?;
    let name_for = |i: usize| {
        FEATURE_NAMES
            .get(i)
            .map(|n| n.to_string())
            .filter(|_| d == FEATURE_DIM)
            .unwrap_or_else(|| format!("x{i}"))
    };
    let features = (0..d)
        .map(|i| CoefficientStat {
            name: name_for(i),
            beta: model.weights[i],
            se: covariance[i][i].sqrt(),
        })
        .collect();
    Ok(CoefficientStats {
        features,
        intercept: CoefficientStat {
            name: "intercept".to_string(),
            beta: model.bias,
            se: covariance[d][d].sqrt(),
        },
    })
}

/// Model file: weights, bias, hyperparameters, and the training-split
/// standardizer they expect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub model: LogisticModel,
    pub standardizer: StandardizationStats,
}

impl SavedModel {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = serde_json::to_string_pretty(self).expect("model serializes");
        out.push('\n');
        std::fs::write(path, out)
    }

    pub fn load(path: &Path) -> std::io::Result<SavedModel> {
        let content = std::fs::read_to_string(path)?;
        serde_json::from_str(&content)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Feature CSV export with the canonical column names.
pub fn write_feature_csv(pairs: &[CommentEditPair], path: &Path) -> std::io::Result<()> {
    let mut out = String::from("pair_id,label");
    for name in FEATURE_NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for pair in pairs {
        out.push_str(&pair.pair_id);
        out.push(',');
        out.push_str(match pair.label {
            Some(Label::Valid) => "Valid",
            Some(Label::Invalid) => "Invalid",
            None => "",
        });
        for value in extract_features(pair).to_array() {
            out.push(',');
            out.push_str(&format!("{value}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// The three conjunctive matching heuristics: the comment precedes the edit,
/// mentions a code term added or removed by it, and comes from a different
/// user than the editor. Missing timestamps or user ids fail closed.
pub fn tang_match(pair: &CommentEditPair) -> bool {
    let temporal = match (pair.comment_time, pair.edit_time) {
        (Some(comment), Some(edit)) => comment < edit,
        _ => false,
    };
    if !temporal {
        return false;
    }
    let distinct_users = match (&pair.commenter_id, &pair.editor_id) {
        (Some(commenter), Some(editor)) => commenter != editor,
        _ => false,
    };
    if !distinct_users {
        return false;
    }
    let delta = token_delta(&line_diff(&pair.code_before, &pair.code_after));
    tokenize_code(&pair.comment_text)
        .iter()
        .any(|t| delta.contains_token(t))
}
