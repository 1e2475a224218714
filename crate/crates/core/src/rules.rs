//! Validation rules: the one-time interpretation stage and the per-instance
//! machine checks that can correct a reasoning verdict.
//!
//! The default ruleset pairs the published decision-rule guidance with three
//! executable predicates: gratitude-only comments force Invalid, a comment
//! timestamped after its edit forces Invalid, and zero overlap with no
//! directive verb raises a flag without changing the decision. LLM-derived
//! guidance never becomes executable automatically; promoting free text to a
//! predicate requires a hand-edited ruleset file.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use thiserror::Error;

use crate::corpus::{corpus_digest, CommentEditPair, Label};
use crate::gateway::{DecodingParams, Gateway, GatewayError, SourceStage, Verdict};
use crate::prompting::{render_interpretation, PromptError};
use crate::textdiff::{lexical_overlap, line_diff, token_delta, TokenDelta};

const GRATITUDE_RAW: &str = include_str!("../assets/keywords/gratitude.txt");
const FIX_WORDS_RAW: &str = include_str!("../assets/keywords/fix_words.txt");

fn parse_word_list(raw: &str) -> Vec<String> {
    raw.lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

/// Gratitude tokens shipped as a data file (phrases allowed).
pub fn default_gratitude_words() -> Vec<String> {
    parse_word_list(GRATITUDE_RAW)
}

/// Directive/fix verbs shipped as a data file.
pub fn default_fix_words() -> Vec<String> {
    parse_word_list(FIX_WORDS_RAW)
}

/// Case-insensitive word-boundary match of any phrase in the list.
/// Compiled patterns are memoized per list.
pub fn any_phrase_match(text: &str, phrases: &[String]) -> bool {
    if phrases.is_empty() {
        return false;
    }
    static CACHE: OnceLock<Mutex<HashMap<String, Regex>>> = OnceLock::new();
    let key = phrases.join("\u{1f}");
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut cache = cache.lock().expect("phrase cache lock");
    let regex = cache.entry(key).or_insert_with(|| {
        let alternation = phrases
            .iter()
            .map(|p| regex::escape(p))
            .collect::<Vec<_>>()
            .join("|");
        Regex::new(&format!(r"(?i)\b(?:{alternation})\b")).expect("keyword pattern")
    });
    regex.is_match(text)
}

fn has_backtick_span(text: &str) -> bool {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN
        .get_or_init(|| Regex::new(r"`[^`]+`").expect("backtick pattern"))
        .is_match(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    MachineCheck,
    Guidance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleDirection {
    ForcesInvalid,
    ForcesValid,
    FlagsOnly,
}

/// Executable parameters for machine-check rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum PredicateSpec {
    /// Gratitude token present, no action verb, no backticked span, and no
    /// lexical overlap with the edit.
    GratitudeOnly {
        gratitude_words: Vec<String>,
        fix_words: Vec<String>,
    },
    /// Fires when both timestamps exist and the comment follows the edit;
    /// vacuously satisfied on partial data.
    TemporalOrder,
    /// Flags comments below the overlap threshold that carry no directive
    /// verb.
    OverlapFlag { min_count: usize, fix_words: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRule {
    pub rule_id: String,
    pub kind: RuleKind,
    pub direction: RuleDirection,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate_spec: Option<PredicateSpec>,
    /// Section line emitted before this rule when rendering the reflection
    /// prompt (reproduces the published two-part rule layout).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleProvenance {
    DefaultStatic,
    LlmDerived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRuleSet {
    pub rules: Vec<ValidationRule>,
    pub provenance: RuleProvenance,
    /// Digest of the corpus the set was derived from; empty for the static
    /// default.
    pub created_from: String,
}

impl ValidationRuleSet {
    /// Renders the guidance texts in order for the reflection prompt,
    /// emitting a rule's header line (if any) before it.
    pub fn guidance_section(&self) -> String {
        let mut lines = Vec::new();
        for rule in &self.rules {
            if rule.kind != RuleKind::Guidance {
                continue;
            }
            if let Some(header) = &rule.header {
                lines.push(header.clone());
            }
            lines.push(format!("- {}", rule.text));
        }
        lines.join("\n")
    }

    /// Builds a guidance-only set; mainly for tests and custom configs.
    pub fn from_guidance_texts(texts: &[&str]) -> ValidationRuleSet {
        ValidationRuleSet {
            rules: texts
                .iter()
                .enumerate()
                .map(|(i, text)| ValidationRule {
                    rule_id: format!("custom{}", i + 1),
                    kind: RuleKind::Guidance,
                    direction: RuleDirection::FlagsOnly,
                    text: text.to_string(),
                    predicate_spec: None,
                    header: None,
                })
                .collect(),
            provenance: RuleProvenance::DefaultStatic,
            created_from: String::new(),
        }
    }

    pub fn digest(&self) -> String {
        crate::digest::sha256_hex(self.to_json().as_bytes())
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("ruleset serializes");
        out.push('\n');
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), RulesError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ValidationRuleSet, RulesError> {
        let content = std::fs::read_to_string(path)?;
        let set: ValidationRuleSet =
            serde_json::from_str(&content).map_err(|e| RulesError::Malformed(e.to_string()))?;
        if set.rules.is_empty() {
            return Err(RulesError::Malformed("ruleset has no rules".to_string()));
        }
        let mut seen = std::collections::HashSet::new();
        for rule in &set.rules {
            if !seen.insert(&rule.rule_id) {
                return Err(RulesError::Malformed(format!(
                    "duplicate rule_id `{}`",
                    rule.rule_id
                )));
            }
        }
        Ok(set)
    }
}

fn guidance(rule_id: &str, text: &str, header: Option<&str>) -> ValidationRule {
    ValidationRule {
        rule_id: rule_id.to_string(),
        kind: RuleKind::Guidance,
        direction: RuleDirection::FlagsOnly,
        text: text.to_string(),
        predicate_spec: None,
        header: header.map(|h| h.to_string()),
    }
}

/// The static ruleset: the published decision-rule guidance plus three
/// machine checks (R1 gratitude-only forces Invalid, R2 temporal order
/// forces Invalid, R3 overlap flag). No ForcesValid rule ships by default,
/// so machine checks never flip Invalid to Valid.
pub fn default_ruleset() -> ValidationRuleSet {
    let rules = vec![
        guidance(
            "G1",
            "The comment implies or requests a change addressed by the edit.",
            Some("Answer “YES” if all are true:"),
        ),
        guidance(
            "G2",
            "There is semantic or lexical overlap between the comment and changed code.",
            None,
        ),
        guidance(
            "G3",
            "The comment appears before the edit and could have triggered it.",
            None,
        ),
        guidance(
            "G4",
            "The comment is gratitude-only or approval-only.",
            Some("Answer “NO” if any are true:"),
        ),
        guidance(
            "G5",
            "The comment discusses something unrelated to the code changes.",
            None,
        ),
        guidance(
            "G6",
            "The edit fixes an issue not mentioned in the comment.",
            None,
        ),
        guidance("G7", "The comment occurs after the edit.", None),
        ValidationRule {
            rule_id: "R1".to_string(),
            kind: RuleKind::MachineCheck,
            direction: RuleDirection::ForcesInvalid,
            text: "The comment is gratitude-only: a gratitude token with no action verb, no backticked span, and no lexical overlap with the edit.".to_string(),
            predicate_spec: Some(PredicateSpec::GratitudeOnly {
                gratitude_words: default_gratitude_words(),
                fix_words: default_fix_words(),
            }),
            header: None,
        },
        ValidationRule {
            rule_id: "R2".to_string(),
            kind: RuleKind::MachineCheck,
            direction: RuleDirection::ForcesInvalid,
            text: "Both timestamps are present and the comment occurs after the edit.".to_string(),
            predicate_spec: Some(PredicateSpec::TemporalOrder),
            header: None,
        },
        ValidationRule {
            rule_id: "R3".to_string(),
            kind: RuleKind::MachineCheck,
            direction: RuleDirection::FlagsOnly,
            text: "The comment has no lexical overlap with the edit and no directive verb.".to_string(),
            predicate_spec: Some(PredicateSpec::OverlapFlag {
                min_count: 1,
                fix_words: default_fix_words(),
            }),
            header: None,
        },
    ];
    ValidationRuleSet {
        rules,
        provenance: RuleProvenance::DefaultStatic,
        created_from: String::new(),
    }
}

/// The gratitude-only predicate: all four conjuncts must hold.
pub fn gratitude_only(
    comment: &str,
    delta: &TokenDelta,
    gratitude_words: &[String],
    fix_words: &[String],
) -> bool {
    any_phrase_match(comment, gratitude_words)
        && !any_phrase_match(comment, fix_words)
        && !has_backtick_span(comment)
        && lexical_overlap(comment, delta).count == 0
}

/// Outcome of running the machine checks against an initial verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub violations: Vec<String>,
    pub corrected: Verdict,
    pub changed: bool,
}

fn rule_fires(spec: &PredicateSpec, pair: &CommentEditPair, delta: &TokenDelta) -> bool {
    match spec {
        PredicateSpec::GratitudeOnly {
            gratitude_words,
            fix_words,
        } => gratitude_only(&pair.comment_text, delta, gratitude_words, fix_words),
        PredicateSpec::TemporalOrder => match (pair.comment_time, pair.edit_time) {
            (Some(comment), Some(edit)) => comment > edit,
            _ => false,
        },
        PredicateSpec::OverlapFlag { min_count, fix_words } => {
            lexical_overlap(&pair.comment_text, delta).count < *min_count
                && !any_phrase_match(&pair.comment_text, fix_words)
        }
    }
}

/// Evaluates machine rules in order. The first forcing violation determines
/// the corrected decision; flag-only violations are recorded without
/// changing it. Idempotent: reapplying to its own output changes nothing.
pub fn apply_machine_rules(
    pair: &CommentEditPair,
    initial: &Verdict,
    ruleset: &ValidationRuleSet,
) -> RuleOutcome {
    let delta = token_delta(&line_diff(&pair.code_before, &pair.code_after));
    let mut violations = Vec::new();
    let mut forced: Option<(Label, String)> = None;
    for rule in &ruleset.rules {
        let Some(spec) = &rule.predicate_spec else { continue };
        if rule.kind != RuleKind::MachineCheck {
            continue;
        }
        if rule_fires(spec, pair, &delta) {
            violations.push(rule.rule_id.clone());
            if forced.is_none() {
                match rule.direction {
                    RuleDirection::ForcesInvalid => {
                        forced = Some((Label::Invalid, rule.rule_id.clone()))
                    }
                    RuleDirection::ForcesValid => {
                        forced = Some((Label::Valid, rule.rule_id.clone()))
                    }
                    RuleDirection::FlagsOnly => {}
                }
            }
        }
    }
    let corrected = match &forced {
        Some((decision, rule_id)) => Verdict {
            decision: *decision,
            source_stage: SourceStage::MachineRule,
            raw_evidence: format!("rule {rule_id} fired; violations: {violations:?}"),
        },
        None => initial.clone(),
    };
    let changed = corrected.decision != initial.decision;
    RuleOutcome {
        violations,
        corrected,
        changed,
    }
}

/// Decision from the machine predicates over prompt-visible fields alone
/// (no timestamps): gratitude-only comments are Invalid, otherwise lexical
/// overlap with the edit decides. This is the oracle behind the
/// rule-following mock backend and the synthetic closed-loop corpora.
pub fn machine_decision(comment: &str, code_before: &str, code_after: &str) -> Label {
    machine_decision_with_lists(
        comment,
        code_before,
        code_after,
        &default_gratitude_words(),
        &default_fix_words(),
    )
}

pub fn machine_decision_with_lists(
    comment: &str,
    code_before: &str,
    code_after: &str,
    gratitude_words: &[String],
    fix_words: &[String],
) -> Label {
    let delta = token_delta(&line_diff(code_before, code_after));
    if gratitude_only(comment, &delta, gratitude_words, fix_words) {
        return Label::Invalid;
    }
    if lexical_overlap(comment, &delta).count >= 1 {
        Label::Valid
    } else {
        Label::Invalid
    }
}

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("interpretation needs at least one pair of each label")]
    InsufficientLabels,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed ruleset: {0}")]
    Malformed(String),
}

/// Knobs for the one-time interpretation pass.
#[derive(Debug, Clone, Copy)]
pub struct InterpretConfig {
    /// Stratified sample size, balanced by label.
    pub sample_size: usize,
    /// Pairs summarized per prompt.
    pub batch_size: usize,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        InterpretConfig {
            sample_size: 200,
            batch_size: 20,
        }
    }
}

/// One-time knowledge-base analysis: a balanced sample is summarized in
/// batches, pattern lines come back as guidance rules appended after the
/// defaults, and the result is persisted keyed by corpus digest. Reruns on
/// the same corpus load from disk without new LLM calls.
pub fn interpret_knowledge_base(
    pairs: &[CommentEditPair],
    gateway: &Gateway,
    params: &DecodingParams,
    config: InterpretConfig,
    store_path: &Path,
) -> Result<ValidationRuleSet, RulesError> {
    let digest = corpus_digest(pairs);
    if store_path.exists() {
        let existing = ValidationRuleSet::load(store_path)?;
        if existing.created_from == digest {
            log::info!("ruleset for corpus {digest} already derived; loading from disk");
            return Ok(existing);
        }
        log::warn!("ruleset at {} was derived from a different corpus; re-deriving", store_path.display());
    }

    let valid: Vec<&CommentEditPair> = pairs.iter().filter(|p| p.label == Some(Label::Valid)).collect();
    let invalid: Vec<&CommentEditPair> = pairs.iter().filter(|p| p.label == Some(Label::Invalid)).collect();
    if valid.is_empty() || invalid.is_empty() {
        return Err(RulesError::InsufficientLabels);
    }

    // Balanced sample in corpus order, interleaved so every batch sees both
    // labels.
    let per_class = (config.sample_size / 2).max(1);
    let mut sample: Vec<CommentEditPair> = Vec::new();
    for i in 0..per_class.max(1) {
        if let Some(p) = valid.get(i) {
            sample.push((*p).clone());
        }
        if let Some(p) = invalid.get(i) {
            sample.push((*p).clone());
        }
    }

    let mut derived: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for batch in sample.chunks(config.batch_size.max(1)) {
        let prompt = render_interpretation(batch)?;
        let completion = gateway.complete(&prompt, params)?;
        for line in completion.raw_text.lines() {
            let trimmed = line.trim_start();
            if let Some(text) = trimmed.strip_prefix("- ") {
                let text = text.trim();
                if !text.is_empty() && seen.insert(text.to_lowercase()) {
                    derived.push(text.to_string());
                }
            }
        }
    }

    let mut ruleset = default_ruleset();
    for (i, text) in derived.iter().enumerate() {
        ruleset.rules.push(ValidationRule {
            rule_id: format!("llm{}", i + 1),
            kind: RuleKind::Guidance,
            direction: RuleDirection::FlagsOnly,
            text: text.clone(),
            predicate_spec: None,
            header: None,
        });
    }
    ruleset.provenance = RuleProvenance::LlmDerived;
    ruleset.created_from = digest;
    ruleset.save(store_path)?;
    Ok(ruleset)
}
