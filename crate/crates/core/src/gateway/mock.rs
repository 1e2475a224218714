//! Offline chat backends for CI and development: no network, no keys.
//!
//! The rule-following mock answers by recovering (comment, code_before,
//! code_after) from the prompt's section markers and applying the machine
//! predicates; it assumes template-shaped prompts. The scripted mock replays
//! a fixture of prompt-digest to response.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

use super::{ChatBackend, DecodingParams, GatewayError};
use crate::corpus::Label;
use crate::digest::sha256_hex;
use crate::prompting::{PromptKind, RenderedPrompt};
use crate::rules::{default_fix_words, default_gratitude_words, machine_decision_with_lists};

/// Fields recovered from a rendered prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptFields {
    pub comment: String,
    pub code_before: String,
    pub code_after: String,
}

fn slice_between<'a>(text: &'a str, start_marker: &str, end: usize) -> Option<(&'a str, usize)> {
    let start = text[..end].rfind(start_marker)? + start_marker.len();
    Some((&text[start..end], start))
}

fn segment<'a>(text: &'a str, start_marker: &str, end_marker: &str) -> Option<&'a str> {
    let start = text.find(start_marker)? + start_marker.len();
    let end = start + text[start..].find(end_marker)?;
    Some(&text[start..end])
}

/// Recovers the query pair's fields from a template-shaped prompt. Returns
/// None when the prompt does not follow the shipped templates.
pub fn extract_prompt_fields(prompt: &RenderedPrompt) -> Option<PromptFields> {
    let text = prompt.text.as_str();
    match prompt.kind {
        PromptKind::Reasoning | PromptKind::FewShot | PromptKind::FewShotCoT => {
            // The current pair lives in the final Context block; exemplar
            // blocks above reuse the same field labels.
            let ctx = text.rfind("\nContext:\nComment: ")? + "\nContext:\n".len();
            let tail = &text[ctx..];
            let comment = segment(tail, "Comment: ", "\nCode Before: ")?;
            let before = segment(tail, "\nCode Before: ", "\nCode After: ")?;
            let after_start = tail.find("\nCode After: ")? + "\nCode After: ".len();
            let terminator = ["\n\nInstruction: Decide", "\n\nReason step by step", "\n\nTask: Does"]
                .iter()
                .filter_map(|m| tail.rfind(m))
                .min()?;
            Some(PromptFields {
                comment: comment.to_string(),
                code_before: before.to_string(),
                code_after: tail.get(after_start..terminator)?.to_string(),
            })
        }
        PromptKind::ZeroShot => {
            let before = segment(text, "\nCode Before:\n", "\n\nCode After:\n")?;
            let after_start = text.find("\n\nCode After:\n")? + "\n\nCode After:\n".len();
            let comment_pos = text.rfind("\n\nComment:\n")?;
            let task_pos = text.rfind("\n\nTask: Does")?;
            Some(PromptFields {
                comment: text.get(comment_pos + "\n\nComment:\n".len()..task_pos)?.to_string(),
                code_before: before.to_string(),
                code_after: text.get(after_start..comment_pos)?.to_string(),
            })
        }
        PromptKind::Reflection => {
            let task_pos = text.rfind("\n\nTask: Compare")?;
            let (comment, comment_start) = slice_between(text, "\ncomment: ", task_pos)?;
            let (after, after_start) = slice_between(text, "\ncode_after: ", comment_start - "\ncomment: ".len())?;
            let (before, _) = slice_between(text, "\nInput:\ncode_before: ", after_start - "\ncode_after: ".len())?;
            Some(PromptFields {
                comment: comment.to_string(),
                code_before: before.to_string(),
                code_after: after.to_string(),
            })
        }
        PromptKind::Apu => {
            let before = segment(text, "Inputs:\ncode_before:\n", "\n\ncomment:\n")?;
            let comment_start = text.find("\n\ncomment:\n")? + "\n\ncomment:\n".len();
            let instr = text.rfind("\n\nInstructions:\n1.")?;
            Some(PromptFields {
                comment: text.get(comment_start..instr)?.to_string(),
                code_before: before.to_string(),
                code_after: String::new(),
            })
        }
        PromptKind::Interpretation => None,
    }
}

/// Deterministic backend that answers VCP prompts with the machine-rule
/// decision, echoes the original snippet for APU prompts, and emits two
/// fixed pattern lines for interpretation prompts.
pub struct RuleFollowingBackend {
    id: String,
    gratitude_words: Vec<String>,
    fix_words: Vec<String>,
}

impl Default for RuleFollowingBackend {
    fn default() -> Self {
        RuleFollowingBackend {
            id: "rule-following".to_string(),
            gratitude_words: default_gratitude_words(),
            fix_words: default_fix_words(),
        }
    }
}

impl RuleFollowingBackend {
    pub fn new() -> RuleFollowingBackend {
        RuleFollowingBackend::default()
    }

    fn decide(&self, fields: &PromptFields) -> Label {
        machine_decision_with_lists(
            &fields.comment,
            &fields.code_before,
            &fields.code_after,
            &self.gratitude_words,
            &self.fix_words,
        )
    }
}

impl ChatBackend for RuleFollowingBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, prompt: &RenderedPrompt, _params: &DecodingParams) -> Result<String, GatewayError> {
        if prompt.kind == PromptKind::Interpretation {
            return Ok("- Valid comments name a code token that appears in the changed lines.\n\
                 - Gratitude-only comments do not trigger edits.\n"
                .to_string());
        }
        let fields = extract_prompt_fields(prompt).ok_or_else(|| {
            GatewayError::Backend(format!("unrecognized {:?} prompt shape", prompt.kind))
        })?;
        let answer = match prompt.kind {
            PromptKind::Apu => fields.code_before,
            PromptKind::ZeroShot => match self.decide(&fields) {
                Label::Valid => "valid".to_string(),
                Label::Invalid => "invalid".to_string(),
            },
            _ => match self.decide(&fields) {
                Label::Valid => "YES".to_string(),
                Label::Invalid => "NO".to_string(),
            },
        };
        Ok(answer)
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ScriptFile {
    responses: HashMap<String, String>,
}

/// Replays a fixture of prompt-digest (SHA-256 of the prompt bytes) to
/// response; unknown prompts are an error so fixtures stay honest.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    id: String,
    responses: HashMap<String, String>,
}

impl ScriptedBackend {
    pub fn new() -> ScriptedBackend {
        ScriptedBackend {
            id: "scripted".to_string(),
            responses: HashMap::new(),
        }
    }

    pub fn from_file(path: &Path) -> Result<ScriptedBackend, GatewayError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Backend(format!("cannot read script {}: {e}", path.display())))?;
        let file: ScriptFile = serde_json::from_str(&content)
            .map_err(|e| GatewayError::Backend(format!("malformed script {}: {e}", path.display())))?;
        Ok(ScriptedBackend {
            id: "scripted".to_string(),
            responses: file.responses,
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let file = ScriptFile {
            responses: self.responses.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file).expect("script serializes"))
    }

    /// Registers a response for the exact prompt text.
    pub fn script(&mut self, prompt_text: &str, response: &str) {
        self.responses
            .insert(sha256_hex(prompt_text.as_bytes()), response.to_string());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, prompt: &RenderedPrompt, _params: &DecodingParams) -> Result<String, GatewayError> {
        let key = sha256_hex(prompt.text.as_bytes());
        self.responses.get(&key).cloned().ok_or_else(|| {
            GatewayError::Backend(format!("no scripted response for prompt digest {key}"))
        })
    }
}
