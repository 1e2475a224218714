//! Prompt rendering for every stage of the workflow.
//!
//! Templates live as versioned text assets with `{name}` placeholders and
//! are pinned byte-for-byte by golden-file tests; editing a template breaks
//! CI on purpose. Renderers are pure: same inputs, same bytes.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::corpus::CommentEditPair;
use crate::digest::sha256_hex;
use crate::retrieval::Neighbor;
use crate::rules::ValidationRuleSet;

const ZERO_SHOT_TEMPLATE: &str = include_str!("../assets/templates/zero_shot.txt");
const REASONING_TEMPLATE: &str = include_str!("../assets/templates/reasoning.txt");
const REFLECTION_TEMPLATE: &str = include_str!("../assets/templates/reflection.txt");
const FEW_SHOT_TEMPLATE: &str = include_str!("../assets/templates/few_shot.txt");
const APU_TEMPLATE: &str = include_str!("../assets/templates/apu.txt");
const INTERPRETATION_TEMPLATE: &str = include_str!("../assets/templates/interpretation.txt");

/// Instruction inserted before the task line when chain-of-thought is on.
const COT_INSTRUCTION: &str =
    "Reason step by step about whether the comment caused the edit, then answer.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptKind {
    ZeroShot,
    Reasoning,
    Reflection,
    FewShot,
    FewShotCoT,
    Apu,
    Interpretation,
}

/// What the completion is expected to contain, which drives parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpectedVocabulary {
    YesNo,
    ValidInvalid,
    CodeOnly,
    FreeText,
}

impl PromptKind {
    pub fn vocabulary(&self) -> ExpectedVocabulary {
        match self {
            PromptKind::ZeroShot => ExpectedVocabulary::ValidInvalid,
            PromptKind::Reasoning
            | PromptKind::Reflection
            | PromptKind::FewShot
            | PromptKind::FewShotCoT => ExpectedVocabulary::YesNo,
            PromptKind::Apu => ExpectedVocabulary::CodeOnly,
            PromptKind::Interpretation => ExpectedVocabulary::FreeText,
        }
    }
}

/// A fully substituted prompt ready for a chat backend.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub kind: PromptKind,
    pub text: String,
    pub expected_vocabulary: ExpectedVocabulary,
}

impl RenderedPrompt {
    fn new(kind: PromptKind, text: String) -> RenderedPrompt {
        RenderedPrompt {
            kind,
            text,
            expected_vocabulary: kind.vocabulary(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("reasoning prompt needs at least one retrieved neighbor")]
    NoNeighbors,
    #[error("reflection prompt needs a ruleset with guidance rules")]
    EmptyRuleSet,
    #[error("few-shot prompt needs at least one exemplar")]
    NoExemplars,
    #[error("exemplar `{0}` has no label")]
    UnlabeledExemplar(String),
    #[error("interpretation prompt needs labeled pairs")]
    NoLabeledPairs,
    #[error("template references unknown placeholder `{0}`")]
    MissingPlaceholder(String),
}

/// Substitutes `{name}` placeholders in a single pass over the template;
/// substituted content is never rescanned.
fn render_template(template: &str, values: &BTreeMap<&str, &str>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| PromptError::MissingPlaceholder(after.chars().take(16).collect()))?;
        let name = &after[..close];
        let value = values
            .get(name)
            .ok_or_else(|| PromptError::MissingPlaceholder(name.to_string()))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn label_text(pair: &CommentEditPair) -> &'static str {
    match pair.label {
        Some(crate::corpus::Label::Valid) => "Valid",
        Some(crate::corpus::Label::Invalid) => "Invalid",
        None => "Unlabeled",
    }
}

/// Direct VCP prompt over a single pair; expects `valid` / `invalid`.
pub fn render_zero_shot(pair: &CommentEditPair) -> RenderedPrompt {
    let values = BTreeMap::from([
        ("code_before", pair.code_before.as_str()),
        ("code_after", pair.code_after.as_str()),
        ("comment", pair.comment_text.as_str()),
    ]);
    let text = render_template(ZERO_SHOT_TEMPLATE, &values).expect("static template");
    RenderedPrompt::new(PromptKind::ZeroShot, text)
}

/// Retrieval-grounded reasoning prompt; neighbors render in the given order
/// (no internal re-sorting), each with its historical label.
pub fn render_reasoning(
    pair: &CommentEditPair,
    neighbors: &[Neighbor],
) -> Result<RenderedPrompt, PromptError> {
    if neighbors.is_empty() {
        return Err(PromptError::NoNeighbors);
    }
    let blocks: Vec<String> = neighbors
        .iter()
        .enumerate()
        .map(|(i, n)| {
            format!(
                "Example{}:\nComment: {}\nCode Before: {}\nCode After: {}\nLabel: {}",
                i + 1,
                n.payload.comment_text,
                n.payload.code_before,
                n.payload.code_after,
                label_text(&n.payload)
            )
        })
        .collect();
    let examples = blocks.join("\n");
    let values = BTreeMap::from([
        ("examples", examples.as_str()),
        ("comment", pair.comment_text.as_str()),
        ("code_before", pair.code_before.as_str()),
        ("code_after", pair.code_after.as_str()),
    ]);
    let text = render_template(REASONING_TEMPLATE, &values)?;
    Ok(RenderedPrompt::new(PromptKind::Reasoning, text))
}

/// Rule-grounded reflection prompt; the Decision Rules section lists the
/// ruleset's guidance texts in order.
pub fn render_reflection(
    pair: &CommentEditPair,
    ruleset: &ValidationRuleSet,
) -> Result<RenderedPrompt, PromptError> {
    let decision_rules = ruleset.guidance_section();
    if decision_rules.is_empty() {
        return Err(PromptError::EmptyRuleSet);
    }
    let values = BTreeMap::from([
        ("decision_rules", decision_rules.as_str()),
        ("code_before", pair.code_before.as_str()),
        ("code_after", pair.code_after.as_str()),
        ("comment", pair.comment_text.as_str()),
    ]);
    let text = render_template(REFLECTION_TEMPLATE, &values)?;
    Ok(RenderedPrompt::new(PromptKind::Reflection, text))
}

/// Few-shot prompt: labeled exemplar blocks ahead of the task, optionally
/// with a chain-of-thought instruction before the task line.
pub fn render_few_shot(
    pair: &CommentEditPair,
    exemplars: &[CommentEditPair],
    cot: bool,
) -> Result<RenderedPrompt, PromptError> {
    if exemplars.is_empty() {
        return Err(PromptError::NoExemplars);
    }
    let blocks: Vec<String> = exemplars
        .iter()
        .map(|ex| {
            let answer = match ex.label {
                Some(crate::corpus::Label::Valid) => "YES",
                Some(crate::corpus::Label::Invalid) => "NO",
                None => return Err(PromptError::UnlabeledExemplar(ex.pair_id.clone())),
            };
            Ok(format!(
                "Example:\nComment: {}\nCode Before: {}\nCode After: {}\nAnswer: {}",
                ex.comment_text, ex.code_before, ex.code_after, answer
            ))
        })
        .collect::<Result<_, _>>()?;
    let examples = blocks.join("\n");
    let cot_line = if cot {
        format!("{COT_INSTRUCTION}\n")
    } else {
        String::new()
    };
    let values = BTreeMap::from([
        ("examples", examples.as_str()),
        ("comment", pair.comment_text.as_str()),
        ("code_before", pair.code_before.as_str()),
        ("code_after", pair.code_after.as_str()),
        ("cot", cot_line.as_str()),
    ]);
    let text = render_template(FEW_SHOT_TEMPLATE, &values)?;
    let kind = if cot { PromptKind::FewShotCoT } else { PromptKind::FewShot };
    Ok(RenderedPrompt::new(kind, text))
}

/// Post-update prompt; the completion should be only the updated snippet.
pub fn render_apu(code_before: &str, comment: &str) -> RenderedPrompt {
    let values = BTreeMap::from([("code_before", code_before), ("comment", comment)]);
    let text = render_template(APU_TEMPLATE, &values).expect("static template");
    RenderedPrompt::new(PromptKind::Apu, text)
}

/// One-time knowledge-base analysis prompt over a labeled batch.
pub fn render_interpretation(pairs: &[CommentEditPair]) -> Result<RenderedPrompt, PromptError> {
    if pairs.is_empty() || pairs.iter().any(|p| p.label.is_none()) {
        return Err(PromptError::NoLabeledPairs);
    }
    let blocks: Vec<String> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            format!(
                "Pair{} ({}):\nComment: {}\nCode Before: {}\nCode After: {}",
                i + 1,
                label_text(p),
                p.comment_text,
                p.code_before,
                p.code_after
            )
        })
        .collect();
    let rendered = blocks.join("\n");
    let values = BTreeMap::from([("pairs", rendered.as_str())]);
    let text = render_template(INTERPRETATION_TEMPLATE, &values)?;
    Ok(RenderedPrompt::new(PromptKind::Interpretation, text))
}

/// Digests of every shipped template asset, for run manifests.
pub fn template_digests() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("zero_shot".to_string(), sha256_hex(ZERO_SHOT_TEMPLATE.as_bytes())),
        ("reasoning".to_string(), sha256_hex(REASONING_TEMPLATE.as_bytes())),
        ("reflection".to_string(), sha256_hex(REFLECTION_TEMPLATE.as_bytes())),
        ("few_shot".to_string(), sha256_hex(FEW_SHOT_TEMPLATE.as_bytes())),
        ("apu".to_string(), sha256_hex(APU_TEMPLATE.as_bytes())),
        ("interpretation".to_string(), sha256_hex(INTERPRETATION_TEMPLATE.as_bytes())),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::rules::default_ruleset;

    fn sample_pair() -> CommentEditPair {
        CommentEditPair::new(
            "p1",
            "you additionally need axis=1 in pd.concat",
            "df = pd.concat([a, b])",
            "df = pd.concat([a, b], axis=1)",
        )
    }

    fn neighbor(id: &str, label: Label) -> Neighbor {
        Neighbor {
            pair_id: id.to_string(),
            similarity: 0.9,
            payload: CommentEditPair::new(id, &format!("comment {id}"), "old", "new").with_label(label),
        }
    }

    #[test]
    fn zero_shot_contains_task_and_choices() {
        let prompt = render_zero_shot(&sample_pair());
        assert!(prompt.text.contains("Does the comment justify the edit?"));
        assert!(prompt.text.contains("valid — the edit is justified by the comment"));
        assert_eq!(prompt.expected_vocabulary, ExpectedVocabulary::ValidInvalid);
        assert_eq!(prompt.text, render_zero_shot(&sample_pair()).text);
    }

    #[test]
    fn zero_shot_with_empty_code_after() {
        let mut pair = sample_pair();
        pair.code_after.clear();
        let prompt = render_zero_shot(&pair);
        assert!(prompt.text.contains("Code After:\n\n"));
        assert!(!prompt.text.contains("{code_after}"));
    }

    #[test]
    fn reasoning_renders_neighbors_in_order() {
        let neighbors = vec![
            neighbor("n1", Label::Valid),
            neighbor("n2", Label::Invalid),
            neighbor("n3", Label::Valid),
        ];
        let prompt = render_reasoning(&sample_pair(), &neighbors).unwrap();
        let p1 = prompt.text.find("Example1:\nComment: comment n1").unwrap();
        let p2 = prompt.text.find("Example2:\nComment: comment n2").unwrap();
        let p3 = prompt.text.find("Example3:\nComment: comment n3").unwrap();
        assert!(p1 < p2 && p2 < p3);
        assert!(prompt.text.contains("Respond strictly with “YES” or “NO”."));
        assert!(prompt.text.contains("Label: Invalid"));
        assert_eq!(prompt.expected_vocabulary, ExpectedVocabulary::YesNo);
    }

    #[test]
    fn reasoning_single_neighbor_and_none() {
        let one = render_reasoning(&sample_pair(), &[neighbor("n1", Label::Valid)]).unwrap();
        assert!(one.text.contains("Example1:"));
        assert!(!one.text.contains("Example2:"));
        assert!(matches!(
            render_reasoning(&sample_pair(), &[]),
            Err(PromptError::NoNeighbors)
        ));
    }

    #[test]
    fn reflection_lists_default_rules() {
        let prompt = render_reflection(&sample_pair(), &default_ruleset()).unwrap();
        assert!(prompt.text.contains("gratitude-only or approval-only"));
        assert!(prompt.text.contains("The comment occurs after the edit."));
        assert!(prompt.text.contains("Output strictly one word: YES or NO."));
        let again = render_reflection(&sample_pair(), &default_ruleset()).unwrap();
        assert_eq!(prompt.text, again.text);
    }

    #[test]
    fn reflection_custom_single_rule() {
        let ruleset = ValidationRuleSet::from_guidance_texts(&["Only one rule applies."]);
        let prompt = render_reflection(&sample_pair(), &ruleset).unwrap();
        let rule_lines: Vec<&str> = prompt
            .text
            .lines()
            .filter(|l| l.starts_with("- "))
            .collect();
        assert_eq!(rule_lines, vec!["- Only one rule applies."]);
    }

    #[test]
    fn few_shot_blocks_and_cot() {
        let exemplars = vec![
            CommentEditPair::new("e1", "add null check", "f(x)", "if (x) f(x)").with_label(Label::Valid),
            CommentEditPair::new("e2", "thanks!", "y", "y").with_label(Label::Invalid),
        ];
        let plain = render_few_shot(&sample_pair(), &exemplars, false).unwrap();
        assert_eq!(plain.kind, PromptKind::FewShot);
        assert_eq!(plain.text.matches("Answer: YES").count(), 1);
        assert_eq!(plain.text.matches("Answer: NO").count(), 1);
        assert!(!plain.text.contains(COT_INSTRUCTION));

        let cot = render_few_shot(&sample_pair(), &exemplars, true).unwrap();
        assert_eq!(cot.kind, PromptKind::FewShotCoT);
        assert_eq!(cot.text.matches(COT_INSTRUCTION).count(), 1);
        assert_eq!(cot.expected_vocabulary, ExpectedVocabulary::YesNo);
    }

    #[test]
    fn few_shot_requires_labeled_exemplars() {
        assert!(matches!(
            render_few_shot(&sample_pair(), &[], false),
            Err(PromptError::NoExemplars)
        ));
        let unlabeled = vec![CommentEditPair::new("e1", "c", "b", "a")];
        assert!(matches!(
            render_few_shot(&sample_pair(), &unlabeled, false),
            Err(PromptError::UnlabeledExemplar(_))
        ));
    }

    #[test]
    fn apu_constraints_present() {
        let prompt = render_apu("int x = 1;", "use long instead");
        assert!(prompt.text.contains("Modify the code only to address the issue stated in the comment."));
        assert!(prompt.text.contains("only the updated code snippet"));
        assert_eq!(prompt.expected_vocabulary, ExpectedVocabulary::CodeOnly);
        let empty_comment = render_apu("int x = 1;", "");
        assert!(empty_comment.text.contains("comment:\n\n"));
        assert_eq!(prompt.text, render_apu("int x = 1;", "use long instead").text);
    }

    #[test]
    fn interpretation_requires_labels() {
        let labeled = vec![
            sample_pair().with_label(Label::Valid),
            CommentEditPair::new("p2", "nice!", "x", "x").with_label(Label::Invalid),
        ];
        let prompt = render_interpretation(&labeled).unwrap();
        assert!(prompt.text.contains("Pair1 (Valid):"));
        assert!(prompt.text.contains("Pair2 (Invalid):"));
        assert!(matches!(
            render_interpretation(&[sample_pair()]),
            Err(PromptError::NoLabeledPairs)
        ));
    }

    #[test]
    fn no_unexpanded_placeholders_anywhere() {
        let ruleset = default_ruleset();
        let pair = sample_pair();
        let exemplars = vec![pair.clone().with_label(Label::Valid)];
        let rendered = [
            render_zero_shot(&pair).text,
            render_reasoning(&pair, &[neighbor("n", Label::Valid)]).unwrap().text,
            render_reflection(&pair, &ruleset).unwrap().text,
            render_few_shot(&pair, &exemplars, true).unwrap().text,
            render_apu(&pair.code_before, &pair.comment_text).text,
            render_interpretation(&exemplars).unwrap().text,
        ];
        for text in rendered {
            for marker in [
                "{comment}",
                "{code_before}",
                "{code_after}",
                "{examples}",
                "{decision_rules}",
                "{cot}",
                "{pairs}",
            ] {
                assert!(!text.contains(marker), "unexpanded {marker}");
            }
        }
    }

    #[test]
    fn template_digests_cover_all_assets() {
        let digests = template_digests();
        assert_eq!(digests.len(), 6);
        assert!(digests.values().all(|d| d.len() == 64));
    }
}
