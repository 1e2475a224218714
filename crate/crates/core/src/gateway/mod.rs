//! Uniform contract for chat-completion backends.
//!
//! Deterministic decoding (temperature 0 by default), bounded retries with
//! exponential backoff, a content-addressed completion cache, regex-based
//! binary-verdict parsing, and fenced-code extraction. Offline mocks live in
//! [`mock`]; an HTTP adapter for OpenAI-style endpoints in [`http`].

pub mod cache;
pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};
use thiserror::Error;

use crate::corpus::Label;
use crate::digest::sha256_hex_parts;
use crate::prompting::RenderedPrompt;
pub use cache::ContentCache;

/// Decoding settings sent with every request. The default temperature is
/// exactly 0.0 to eliminate stochastic variability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            temperature: 0.0,
            max_tokens: 512,
            model_id: "default".to_string(),
        }
    }
}

/// Raw completion plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub raw_text: String,
    pub from_cache: bool,
    pub backend_id: String,
    pub latency_ms: u64,
}

/// Which stage produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceStage {
    ZeroShot,
    Reasoning,
    MachineRule,
    Reflection,
    Baseline,
}

impl fmt::Display for SourceStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SourceStage::ZeroShot => "ZeroShot",
            SourceStage::Reasoning => "Reasoning",
            SourceStage::MachineRule => "MachineRule",
            SourceStage::Reflection => "Reflection",
            SourceStage::Baseline => "Baseline",
        };
        write!(f, "{name}")
    }
}

/// A binary validity decision with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Label,
    pub source_stage: SourceStage,
    pub raw_evidence: String,
}

/// Returned (as a value, never a panic) when no vocabulary token can be
/// extracted from a completion; carries the raw text for audit.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseFailure {
    pub raw_text: String,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no vocabulary token found in completion")
    }
}

/// Token pair scanned for by `parse_binary`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryVocabulary {
    YesNo,
    ValidInvalid,
}

impl BinaryVocabulary {
    fn tokens(&self) -> [(&'static str, Label); 2] {
        match self {
            BinaryVocabulary::YesNo => [("yes", Label::Valid), ("no", Label::Invalid)],
            BinaryVocabulary::ValidInvalid => {
                [("valid", Label::Valid), ("invalid", Label::Invalid)]
            }
        }
    }
}

/// Maps the first standalone vocabulary token (case-insensitive, word
/// boundaries) to a verdict. Total: every input yields a Verdict or a
/// ParseFailure value.
pub fn parse_binary(
    raw_text: &str,
    vocabulary: BinaryVocabulary,
    source_stage: SourceStage,
) -> Result<Verdict, ParseFailure> {
    let mut first: Option<(usize, Label)> = None;
    let mut tie = false;
    for (token, label) in vocabulary.tokens() {
        let pattern = regex::Regex::new(&format!(r"(?i)\b{token}\b")).expect("static pattern");
        if let Some(m) = pattern.find(raw_text) {
            match first {
                None => first = Some((m.start(), label)),
                Some((pos, existing)) => {
                    if m.start() < pos {
                        first = Some((m.start(), label));
                        tie = false;
                    } else if m.start() == pos && existing != label {
                        tie = true;
                    }
                }
            }
        }
    }
    match first {
        Some((_, decision)) if !tie => Ok(Verdict {
            decision,
            source_stage,
            raw_evidence: raw_text.to_string(),
        }),
        _ => Err(ParseFailure {
            raw_text: raw_text.to_string(),
        }),
    }
}

/// Returns the interior of the first fenced code block, or the trimmed input
/// when no complete fence exists.
pub fn extract_code_block(raw_text: &str) -> String {
    if let Some(open) = raw_text.find("```") {
        let rest = &raw_text[open + 3..];
        if let Some(close) = rest.find("```") {
            let body = &rest[..close];
            let interior = match body.find('\n') {
                // Text on the fence line is an info string (language tag).
                Some(nl) => &body[nl + 1..],
                None => body,
            };
            return interior.trim_matches('\n').to_string();
        }
    }
    raw_text.trim().to_string()
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("backend `{backend}` unavailable after {attempts} attempts: {last_error}")]
    BackendUnavailable {
        backend: String,
        attempts: u32,
        last_error: String,
    },
    #[error("rate limited (retry after {retry_after_ms:?} ms)")]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("request timed out after {0} ms")]
    Timeout(u64),
    #[error("backend error: {0}")]
    Backend(String),
}

impl GatewayError {
    fn retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::BackendUnavailable { .. }
                | GatewayError::RateLimited { .. }
                | GatewayError::Timeout(_)
        )
    }
}

/// Chat-completion backend contract. Implementations receive the rendered
/// prompt (with its kind metadata, which mocks use) and must be safe to call
/// from several threads at once.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn send(&self, prompt: &RenderedPrompt, params: &DecodingParams) -> Result<String, GatewayError>;
}

/// Retry schedule: `max_attempts` total tries with exponential backoff from
/// `base_delay_ms` (a rate-limit retry-after hint takes precedence).
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 100,
        }
    }
}

/// Front door for completions: cache first, then the backend with bounded
/// retries. Counters support the mode-isolation checks.
pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    cache: Option<ContentCache>,
    retry: RetryPolicy,
    completions: AtomicU64,
    backend_calls: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>) -> Gateway {
        Gateway {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            completions: AtomicU64::new(0),
            backend_calls: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ContentCache) -> Gateway {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Gateway {
        self.retry = retry;
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    /// Number of `complete` calls issued through this gateway.
    pub fn completions(&self) -> u64 {
        self.completions.load(Ordering::SeqCst)
    }

    /// Number of actual backend invocations (cache hits excluded).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    fn cache_key(&self, prompt: &RenderedPrompt, params: &DecodingParams) -> String {
        sha256_hex_parts(&[
            b"complete",
            self.backend.id().as_bytes(),
            params.model_id.as_bytes(),
            format!("{:?}", params.temperature).as_bytes(),
            params.max_tokens.to_string().as_bytes(),
            prompt.text.as_bytes(),
        ])
    }

    pub fn complete(
        &self,
        prompt: &RenderedPrompt,
        params: &DecodingParams,
    ) -> Result<CompletionResult, GatewayError> {
        if prompt.text.is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        self.completions.fetch_add(1, Ordering::SeqCst);
        let key = self.cache_key(prompt, params);
        if let Some(cache) = &self.cache {
            if let Some(raw_text) = cache.get(&key) {
                return Ok(CompletionResult {
                    raw_text,
                    from_cache: true,
                    backend_id: self.backend.id().to_string(),
                    latency_ms: 0,
                });
            }
        }
        let mut last_error = GatewayError::Backend("no attempt made".to_string());
        for attempt in 1..=self.retry.max_attempts.max(1) {
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            let start = Instant::now();
            match self.backend.send(prompt, params) {
                Ok(raw_text) => {
                    if raw_text.is_empty() {
                        log::warn!("backend {} returned an empty completion", self.backend.id());
                    }
                    if let Some(cache) = &self.cache {
                        if let Err(err) = cache.put(&key, &raw_text) {
                            log::warn!("cache write failed for {key}: {err}");
                        }
                    }
                    return Ok(CompletionResult {
                        raw_text,
                        from_cache: false,
                        backend_id: self.backend.id().to_string(),
                        latency_ms: start.elapsed().as_millis() as u64,
                    });
                }
                Err(err) => {
                    let retryable = err.retryable();
                    let hinted_delay = match &err {
                        GatewayError::RateLimited { retry_after_ms } => *retry_after_ms,
                        _ => None,
                    };
                    last_error = err;
                    if !retryable || attempt == self.retry.max_attempts.max(1) {
                        break;
                    }
                    let backoff = self.retry.base_delay_ms.saturating_mul(1 << (attempt - 1));
                    let delay = hinted_delay.unwrap_or(backoff).max(backoff.min(1));
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
        match last_error {
            err @ (GatewayError::RateLimited { .. } | GatewayError::Timeout(_)) => Err(err),
            err => Err(GatewayError::BackendUnavailable {
                backend: self.backend.id().to_string(),
                attempts: self.retry.max_attempts.max(1),
                last_error: err.to_string(),
            }),
        }
    }
}
