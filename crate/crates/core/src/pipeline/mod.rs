//! End-to-end pipeline commands: ingest, index, interpret, train-lr,
//! predict, evaluate, apu, and report.
//!
//! Every command persists its artifact plus a run manifest whose digests
//! cover the inputs that affect outputs. Prediction and report files are
//! byte-deterministic for a fixed (config, corpus, cache) triple; manifests
//! carry wall-clock timestamps and are exempt.

mod report;

pub use report::{cmd_evaluate, cmd_report, format_comparison_table, EvalReport, TechniqueRow};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

use crate::baselines::{
    apply_standardizer, classify, coefficient_stats, extract_features, fit_logistic,
    fit_standardizer, predict_proba, tang_match, write_feature_csv, BaselineError, LrHyper,
    SavedModel,
};
use crate::corpus::{
    corpus_digest, corpus_stats, load_corpus, save_corpus, CommentEditPair,
    CorpusError, CorpusFormat, CorpusStats, DatasetSplit, Label, SplitSpec,
};
use crate::digest::sha256_hex;
use crate::gateway::http::HttpChatBackend;
use crate::gateway::mock::{RuleFollowingBackend, ScriptedBackend};
use crate::gateway::{
    extract_code_block, parse_binary, BinaryVocabulary, ChatBackend, ContentCache, DecodingParams,
    Gateway, GatewayError, RetryPolicy, SourceStage, Verdict,
};
use crate::metrics::{bleu4_addone, exact_match, ApuInstance, ApuScore, MetricsError};
use crate::prompting::{
    render_apu, render_few_shot, render_reasoning, render_reflection, render_zero_shot,
    template_digests, PromptError,
};
use crate::retrieval::{
    build_index, embed, load_index, query_top_k, render_retrieval_text, save_index,
    HashEmbeddingBackend, IndexedRecord, RetrievalError, VectorIndex,
};
use crate::rules::{
    apply_machine_rules, default_ruleset, interpret_knowledge_base, InterpretConfig, RulesError,
    ValidationRuleSet,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("mode `{mode}` is missing prerequisite artifact: {artifact}")]
    MissingPrerequisite { mode: String, artifact: String },
    #[error("pair `{0}` has no label")]
    MissingLabel(String),
    #[error("prediction references pair `{0}` absent from the corpus")]
    UnknownPairId(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// Stable machine-readable kind for the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::MissingPrerequisite { .. } => "missing_prerequisite",
            PipelineError::MissingLabel(_) => "missing_label",
            PipelineError::UnknownPairId(_) => "unknown_pair_id",
            PipelineError::Corpus(_) => "corpus",
            PipelineError::Retrieval(_) => "retrieval",
            PipelineError::Prompt(_) => "prompt",
            PipelineError::Gateway(_) => "gateway",
            PipelineError::Rules(_) => "rules",
            PipelineError::Baseline(_) => "baseline",
            PipelineError::Metrics(_) => "metrics",
            PipelineError::Io(_) => "io",
            PipelineError::Json(_) => "json",
        }
    }
}

/// Prediction technique selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ZeroShot,
    FewShot,
    FewShotCot,
    Tang,
    FeaturesLr,
    RagOnly,
    ReflectOnly,
    RagReflect,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Mode::ZeroShot,
        Mode::FewShot,
        Mode::FewShotCot,
        Mode::Tang,
        Mode::FeaturesLr,
        Mode::RagOnly,
        Mode::ReflectOnly,
        Mode::RagReflect,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::ZeroShot => "zero-shot",
            Mode::FewShot => "few-shot",
            Mode::FewShotCot => "few-shot-cot",
            Mode::Tang => "tang",
            Mode::FeaturesLr => "features-lr",
            Mode::RagOnly => "rag-only",
            Mode::ReflectOnly => "reflect-only",
            Mode::RagReflect => "rag-reflect",
        }
    }

    fn uses_llm(&self) -> bool {
        !matches!(self, Mode::Tang | Mode::FeaturesLr)
    }

    fn uses_retrieval(&self) -> bool {
        matches!(self, Mode::RagOnly | Mode::RagReflect)
    }

    fn uses_rules(&self) -> bool {
        matches!(self, Mode::ReflectOnly | Mode::RagReflect)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Mode, String> {
        Mode::ALL
            .iter()
            .find(|m| m.as_str() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = Mode::ALL.iter().map(|m| m.as_str()).collect();
                format!("unknown mode `{s}`; expected one of {}", names.join(", "))
            })
    }
}

fn default_k() -> usize {
    3
}
fn default_backend() -> String {
    "feature-hash".to_string()
}
fn default_dim() -> usize {
    64
}
fn default_true() -> bool {
    true
}
fn default_gateway_backend() -> String {
    "rule-following".to_string()
}
fn default_model_id() -> String {
    "rule-following-v1".to_string()
}
fn default_temperature() -> f64 {
    0.0
}
fn default_max_tokens() -> u32 {
    512
}
fn default_parallelism() -> usize {
    4
}
fn default_retry_attempts() -> u32 {
    3
}
fn default_retry_base_ms() -> u64 {
    100
}
fn default_api_key_env() -> String {
    "REFLECT_PIPE_API_KEY".to_string()
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_sample_size() -> usize {
    200
}
fn default_batch_size() -> usize {
    20
}
fn default_lr() -> f64 {
    0.1
}
fn default_iterations() -> usize {
    2000
}
fn default_l2() -> f64 {
    1e-4
}
fn default_threshold() -> f64 {
    0.5
}
fn default_split_name() -> String {
    "test".to_string()
}
fn default_default_verdict() -> String {
    "Invalid".to_string()
}
fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    pub mode: String,
    #[serde(default)]
    pub ratios: Option<[f64; 3]>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            mode: "field".to_string(),
            ratios: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub split: SplitConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub index_path: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub exclude_self: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: default_k(),
            backend: default_backend(),
            dim: default_dim(),
            index_path: None,
            exclude_self: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewayConfig {
    #[serde(default = "default_gateway_backend")]
    pub backend: String,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_retry_attempts")]
    pub retry_attempts: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    #[serde(default)]
    pub script_path: Option<PathBuf>,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            backend: default_gateway_backend(),
            model_id: default_model_id(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            parallelism: default_parallelism(),
            cache_dir: None,
            retry_attempts: default_retry_attempts(),
            retry_base_ms: default_retry_base_ms(),
            script_path: None,
            base_url: None,
            api_key_env: default_api_key_env(),
            timeout_ms: default_timeout_ms(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RulesConfig {
    #[serde(default)]
    pub ruleset_path: Option<PathBuf>,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

impl Default for RulesConfig {
    fn default() -> Self {
        RulesConfig {
            ruleset_path: None,
            sample_size: default_sample_size(),
            batch_size: default_batch_size(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FewShotConfig {
    #[serde(default)]
    pub exemplar_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig {
            learning_rate: default_lr(),
            iterations: default_iterations(),
            l2: default_l2(),
            model_path: None,
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictConfig {
    #[serde(default = "default_split_name")]
    pub split: String,
    #[serde(default = "default_default_verdict")]
    pub default_verdict: String,
    #[serde(default = "default_true")]
    pub reflection_llm_pass: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            split: default_split_name(),
            default_verdict: default_default_verdict(),
            reflection_llm_pass: true,
        }
    }
}

/// Full pipeline configuration, loaded from TOML. Relative paths resolve
/// against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub rules: RulesConfig,
    #[serde(default)]
    pub few_shot: FewShotConfig,
    #[serde(default)]
    pub lr: LrConfig,
    #[serde(default)]
    pub predict: PredictConfig,
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&path);
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let content = std::fs::read_to_string(path)?;
        let mut config: PipelineConfig =
            toml::from_str(&content).map_err(|e| PipelineError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        resolve(&base, &mut config.output_dir);
        resolve(&base, &mut config.corpus.path);
        if let Some(p) = &mut config.retrieval.index_path {
            resolve(&base, p);
        }
        if let Some(p) = &mut config.gateway.cache_dir {
            resolve(&base, p);
        }
        if let Some(p) = &mut config.gateway.script_path {
            resolve(&base, p);
        }
        if let Some(p) = &mut config.rules.ruleset_path {
            resolve(&base, p);
        }
        if let Some(p) = &mut config.lr.model_path {
            resolve(&base, p);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.retrieval.k < 1 {
            return Err(PipelineError::Config("retrieval.k must be >= 1".to_string()));
        }
        if self.gateway.parallelism < 1 {
            return Err(PipelineError::Config("gateway.parallelism must be >= 1".to_string()));
        }
        if !self.corpus.path.exists() {
            return Err(PipelineError::Config(format!(
                "corpus path {} does not exist",
                self.corpus.path.display()
            )));
        }
        match self.corpus.split.mode.as_str() {
            "field" => {}
            "ratios" => {
                if self.corpus.split.ratios.is_none() {
                    return Err(PipelineError::Config(
                        "split mode `ratios` requires corpus.split.ratios".to_string(),
                    ));
                }
            }
            other => {
                return Err(PipelineError::Config(format!(
                    "unknown split mode `{other}` (expected `field` or `ratios`)"
                )))
            }
        }
        Label::parse(&self.predict.default_verdict).ok_or_else(|| {
            PipelineError::Config(format!(
                "predict.default_verdict `{}` is not a label",
                self.predict.default_verdict
            ))
        })?;
        Ok(())
    }

    /// Digest over the resolved configuration.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn index_path(&self) -> PathBuf {
        self.retrieval
            .index_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("index.jsonl"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.lr
            .model_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("lr-model.json"))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.gateway
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache"))
    }

    fn split_spec(&self) -> SplitSpec {
        match self.corpus.split.mode.as_str() {
            "ratios" => {
                let r = self.corpus.split.ratios.expect("validated");
                SplitSpec::Ratios {
                    train: r[0],
                    validation: r[1],
                    test: r[2],
                    seed: self.seed,
                }
            }
            _ => SplitSpec::Field,
        }
    }

    fn corpus_format(&self) -> CorpusFormat {
        match self.corpus.format.as_deref() {
            Some("csv") => CorpusFormat::Csv,
            Some(_) => CorpusFormat::JsonLines,
            None => CorpusFormat::from_path(&self.corpus.path),
        }
    }

    pub fn load_pairs(&self) -> Result<Vec<CommentEditPair>, PipelineError> {
        Ok(load_corpus(&self.corpus.path, self.corpus_format())?)
    }

    pub fn load_split(&self) -> Result<(Vec<CommentEditPair>, DatasetSplit), PipelineError> {
        let pairs = self.load_pairs()?;
        let split = crate::corpus::split_corpus(&pairs, &self.split_spec())?;
        Ok((pairs, split))
    }

    fn decoding_params(&self) -> DecodingParams {
        DecodingParams {
            temperature: self.gateway.temperature,
            max_tokens: self.gateway.max_tokens,
            model_id: self.gateway.model_id.clone(),
        }
    }

    fn default_verdict_label(&self) -> Label {
        Label::parse(&self.predict.default_verdict).expect("validated")
    }

    pub fn build_gateway(&self) -> Result<Gateway, PipelineError> {
        let backend: Box<dyn ChatBackend> = match self.gateway.backend.as_str() {
            "rule-following" => Box::new(RuleFollowingBackend::new()),
            "scripted" => {
                let path = self.gateway.script_path.as_ref().ok_or_else(|| {
                    PipelineError::Config("scripted backend requires gateway.script_path".to_string())
                })?;
                Box::new(ScriptedBackend::from_file(path)?)
            }
            "http" => {
                let base_url = self.gateway.base_url.as_ref().ok_or_else(|| {
                    PipelineError::Config("http backend requires gateway.base_url".to_string())
                })?;
                Box::new(HttpChatBackend::new(
                    base_url,
                    &self.gateway.api_key_env,
                    self.gateway.timeout_ms,
                )?)
            }
            other => {
                return Err(PipelineError::Config(format!(
                    "unknown gateway backend `{other}`"
                )))
            }
        };
        let cache = ContentCache::open(self.cache_dir())?;
        Ok(Gateway::new(backend).with_cache(cache).with_retry(RetryPolicy {
            max_attempts: self.gateway.retry_attempts,
            base_delay_ms: self.gateway.retry_base_ms,
        }))
    }

    fn embedding_backend(&self) -> Result<HashEmbeddingBackend, PipelineError> {
        match self.retrieval.backend.as_str() {
            "feature-hash" => Ok(HashEmbeddingBackend::new(self.retrieval.dim)),
            other => Err(PipelineError::Config(format!(
                "unknown embedding backend `{other}` (feature-hash is the shipped implementation)"
            ))),
        }
    }

    fn chosen_split<'a>(&self, split: &'a DatasetSplit) -> Result<&'a [CommentEditPair], PipelineError> {
        match self.predict.split.as_str() {
            "train" => Ok(&split.train),
            "validation" => Ok(&split.validation),
            "test" => Ok(&split.test),
            other => Err(PipelineError::Config(format!("unknown predict split `{other}`"))),
        }
    }
}

/// Per-pair trace of stage verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageVerdict {
    pub stage: SourceStage,
    pub decision: Label,
    pub evidence_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub pair_id: String,
    pub mode: Mode,
    pub stage_verdicts: Vec<StageVerdict>,
    #[serde(rename = "final")]
    pub final_verdict: Verdict,
    pub neighbors_used: Vec<String>,
    pub parse_failures: u32,
    pub cache_hits: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantinedPair {
    pub pair_id: String,
    pub error: String,
}

/// Everything a predict run produced, plus counters for isolation checks.
#[derive(Debug)]
pub struct PredictOutput {
    pub records: Vec<PredictionRecord>,
    pub quarantined: Vec<QuarantinedPair>,
    pub predictions_path: PathBuf,
    pub llm_completions: u64,
    pub backend_calls: u64,
    pub retrieval_queries: u64,
}

/// Manifest accompanying every artifact; digests cover the inputs that
/// affect outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    pub config_digest: String,
    pub corpus_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ruleset_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_digest: Option<String>,
    pub template_digests: BTreeMap<String, String>,
    pub backend_ids: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
    pub totals: BTreeMap<String, u64>,
}

struct ManifestBuilder {
    manifest: RunManifest,
}

impl ManifestBuilder {
    fn new(command: &str, config: &PipelineConfig, corpus: &[CommentEditPair]) -> ManifestBuilder {
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                mode: None,
                config_digest: config.digest(),
                corpus_digest: corpus_digest(corpus),
                ruleset_digest: None,
                index_digest: None,
                model_digest: None,
                template_digests: template_digests(),
                backend_ids: Vec::new(),
                started_at: chrono::Utc::now().to_rfc3339(),
                finished_at: String::new(),
                totals: BTreeMap::new(),
            },
        }
    }

    fn mode(mut self, mode: Mode) -> Self {
        self.manifest.mode = Some(mode.to_string());
        self
    }

    fn ruleset(mut self, digest: Option<String>) -> Self {
        self.manifest.ruleset_digest = digest;
        self
    }

    fn index(mut self, digest: Option<String>) -> Self {
        self.manifest.index_digest = digest;
        self
    }

    fn model(mut self, digest: Option<String>) -> Self {
        self.manifest.model_digest = digest;
        self
    }

    fn backend(mut self, id: &str) -> Self {
        self.manifest.backend_ids.push(id.to_string());
        self
    }

    fn total(mut self, key: &str, value: u64) -> Self {
        self.manifest.totals.insert(key.to_string(), value);
        self
    }

    fn write(mut self, path: &Path) -> Result<RunManifest, PipelineError> {
        self.manifest.finished_at = chrono::Utc::now().to_rfc3339();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = serde_json::to_string_pretty(&self.manifest)?;
        out.push('\n');
        std::fs::write(path, out)?;
        Ok(self.manifest)
    }
}

fn file_digest(path: &Path) -> Result<String, PipelineError> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Bounded-parallelism ordered map: results come back in input order no
/// matter which worker finished first.
fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                *slots[i].lock().expect("result slot") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("worker filled slot"))
        .collect()
}

/// Loads, validates, and canonicalizes a corpus; writes the canonical
/// JSON-lines form plus stats and a manifest into the output directory.
pub fn cmd_ingest(config: &PipelineConfig) -> Result<CorpusStats, PipelineError> {
    let pairs = config.load_pairs()?;
    let stats = corpus_stats(&pairs);
    std::fs::create_dir_all(&config.output_dir)?;
    let corpus_out = config.output_dir.join("corpus.jsonl");
    save_corpus(&pairs, &corpus_out)?;
    let stats_out = config.output_dir.join("corpus-stats.json");
    let mut body = serde_json::to_string_pretty(&stats)?;
    body.push('\n');
    std::fs::write(stats_out, body)?;
    ManifestBuilder::new("ingest", config, &pairs)
        .total("pairs", pairs.len() as u64)
        .write(&config.output_dir.join("manifest-ingest.json"))?;
    Ok(stats)
}

/// Embeds the training split and persists the vector index.
pub fn cmd_index(config: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    let (pairs, split) = config.load_split()?;
    let backend = config.embedding_backend()?;
    let cache = ContentCache::open(config.cache_dir())?;
    let mut records = Vec::with_capacity(split.train.len());
    for pair in &split.train {
        let vector = embed(&render_retrieval_text(pair), &backend, Some(&cache))?;
        records.push(IndexedRecord::new(&pair.pair_id, vector, pair.clone())?);
    }
    let index = build_index(records, crate::retrieval::EmbeddingBackend::id(&backend))?;
    let path = config.index_path();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_index(&index, &path)?;
    ManifestBuilder::new("index", config, &pairs)
        .backend(crate::retrieval::EmbeddingBackend::id(&backend))
        .index(Some(file_digest(&path)?))
        .total("indexed", index.len() as u64)
        .write(&config.output_dir.join("manifest-index.json"))?;
    Ok(path)
}

/// Runs the one-time interpretation pass over the training split and
/// persists the derived ruleset (idempotent per corpus digest).
pub fn cmd_interpret(config: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    let (pairs, split) = config.load_split()?;
    let gateway = config.build_gateway()?;
    let path = config
        .rules
        .ruleset_path
        .clone()
        .unwrap_or_else(|| config.output_dir.join("ruleset.json"));
    let ruleset = interpret_knowledge_base(
        &split.train,
        &gateway,
        &config.decoding_params(),
        InterpretConfig {
            sample_size: config.rules.sample_size,
            batch_size: config.rules.batch_size,
        },
        &path,
    )?;
    ManifestBuilder::new("interpret", config, &pairs)
        .backend(gateway.backend_id())
        .ruleset(Some(ruleset.digest()))
        .total("rules", ruleset.rules.len() as u64)
        .total("llm_completions", gateway.completions())
        .write(&config.output_dir.join("manifest-interpret.json"))?;
    Ok(path)
}

/// Trains the feature-based logistic-regression baseline on the training
/// split; persists the model, coefficient stats, and a feature CSV.
pub fn cmd_train_lr(config: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    let (pairs, split) = config.load_split()?;
    let labeled: Vec<&CommentEditPair> =
        split.train.iter().filter(|p| p.label.is_some()).collect();
    if labeled.is_empty() {
        return Err(PipelineError::MissingPrerequisite {
            mode: Mode::FeaturesLr.to_string(),
            artifact: "labeled training pairs".to_string(),
        });
    }
    let x_raw: Vec<Vec<f64>> = labeled
        .iter()
        .map(|p| extract_features(p).to_array().to_vec())
        .collect();
    let y: Vec<bool> = labeled.iter().map(|p| p.label == Some(Label::Valid)).collect();
    let standardizer = fit_standardizer(&x_raw)?;
    let x = apply_standardizer(&standardizer, &x_raw)?;
    let fit = fit_logistic(
        &x,
        &y,
        LrHyper {
            learning_rate: config.lr.learning_rate,
            iterations: config.lr.iterations,
            l2: config.lr.l2,
        },
    )?;
    // Standard errors are reported for retained (non-constant) features;
    // constant columns standardize to zero and would make the information
    // matrix singular by construction.
    let retained: Vec<usize> = (0..crate::baselines::FEATURE_DIM)
        .filter(|j| !standardizer.constant[*j])
        .collect();
    let x_retained: Vec<Vec<f64>> = x
        .iter()
        .map(|row| retained.iter().map(|j| row[*j]).collect())
        .collect();
    let reduced_model = crate::baselines::LogisticModel {
        weights: retained.iter().map(|j| fit.model.weights[*j]).collect(),
        bias: fit.model.bias,
        hyper: fit.model.hyper,
    };
    let stats = coefficient_stats(&reduced_model, &x_retained).map(|mut stats| {
        for (stat, j) in stats.features.iter_mut().zip(&retained) {
            stat.name = crate::baselines::FEATURE_NAMES[*j].to_string();
        }
        stats
    });
    let saved = SavedModel {
        model: fit.model,
        standardizer,
    };
    let path = config.model_path();
    saved.save(&path)?;
    match stats {
        Ok(stats) => {
            let mut body = serde_json::to_string_pretty(&stats)?;
            body.push('\n');
            std::fs::write(config.output_dir.join("lr-coefficients.json"), body)?;
        }
        Err(err) => log::warn!("coefficient standard errors unavailable: {err}"),
    }
    let train_refs: Vec<CommentEditPair> = labeled.iter().map(|p| (*p).clone()).collect();
    write_feature_csv(&train_refs, &config.output_dir.join("features-train.csv"))?;
    ManifestBuilder::new("train-lr", config, &pairs)
        .model(Some(file_digest(&path)?))
        .total("train_pairs", labeled.len() as u64)
        .write(&config.output_dir.join("manifest-train-lr.json"))?;
    Ok(path)
}

struct PredictResources {
    gateway: Option<Gateway>,
    index: Option<VectorIndex>,
    ruleset: Option<ValidationRuleSet>,
    exemplars: Vec<CommentEditPair>,
    model: Option<SavedModel>,
    embedding: Option<HashEmbeddingBackend>,
    params: DecodingParams,
    default_verdict: Label,
    k: usize,
    exclude_self: bool,
    reflection_llm_pass: bool,
    retrieval_queries: AtomicUsize,
}

impl PredictResources {
    fn gateway(&self) -> &Gateway {
        self.gateway.as_ref().expect("gateway built for LLM mode")
    }
}

fn stage_entry(stage: SourceStage, decision: Label, evidence: &str) -> StageVerdict {
    StageVerdict {
        stage,
        decision,
        evidence_sha256: sha256_hex(evidence.as_bytes()),
    }
}

fn complete_and_parse(
    res: &PredictResources,
    prompt: &crate::prompting::RenderedPrompt,
    vocabulary: BinaryVocabulary,
    stage: SourceStage,
    parse_failures: &mut u32,
    cache_hits: &mut u32,
) -> Result<Verdict, GatewayError> {
    let completion = res.gateway().complete(prompt, &res.params)?;
    if completion.from_cache {
        *cache_hits += 1;
    }
    match parse_binary(&completion.raw_text, vocabulary, stage) {
        Ok(verdict) => Ok(verdict),
        Err(failure) => {
            *parse_failures += 1;
            Ok(Verdict {
                decision: res.default_verdict,
                source_stage: stage,
                raw_evidence: failure.raw_text,
            })
        }
    }
}

fn predict_one(
    pair: &CommentEditPair,
    mode: Mode,
    res: &PredictResources,
) -> Result<PredictionRecord, PipelineError> {
    let mut stages: Vec<StageVerdict> = Vec::new();
    let mut neighbors_used: Vec<String> = Vec::new();
    let mut parse_failures = 0u32;
    let mut cache_hits = 0u32;

    let push = |stages: &mut Vec<StageVerdict>, verdict: &Verdict| {
        stages.push(stage_entry(verdict.source_stage, verdict.decision, &verdict.raw_evidence));
    };

    let initial: Verdict = match mode {
        Mode::Tang => {
            let matched = tang_match(pair);
            let verdict = Verdict {
                decision: if matched { Label::Valid } else { Label::Invalid },
                source_stage: SourceStage::Baseline,
                raw_evidence: format!("tang_match={matched}"),
            };
            push(&mut stages, &verdict);
            verdict
        }
        Mode::FeaturesLr => {
            let saved = res.model.as_ref().expect("model loaded");
            let features = extract_features(pair).to_array().to_vec();
            let x = apply_standardizer(&saved.standardizer, &[features])?;
            let p = predict_proba(&saved.model, &x[0])?;
            let decision = classify(&saved.model, &x[0], 0.5)?;
            let verdict = Verdict {
                decision,
                source_stage: SourceStage::Baseline,
                raw_evidence: format!("p_valid={p:.6}"),
            };
            push(&mut stages, &verdict);
            verdict
        }
        Mode::ZeroShot | Mode::ReflectOnly => {
            let prompt = render_zero_shot(pair);
            let verdict = complete_and_parse(
                res,
                &prompt,
                BinaryVocabulary::ValidInvalid,
                SourceStage::ZeroShot,
                &mut parse_failures,
                &mut cache_hits,
            )?;
            push(&mut stages, &verdict);
            verdict
        }
        Mode::FewShot | Mode::FewShotCot => {
            let prompt = render_few_shot(pair, &res.exemplars, mode == Mode::FewShotCot)?;
            let verdict = complete_and_parse(
                res,
                &prompt,
                BinaryVocabulary::YesNo,
                SourceStage::Reasoning,
                &mut parse_failures,
                &mut cache_hits,
            )?;
            push(&mut stages, &verdict);
            verdict
        }
        Mode::RagOnly | Mode::RagReflect => {
            let index = res.index.as_ref().expect("index loaded");
            let backend = res.embedding.as_ref().expect("embedding backend");
            let query = embed(&render_retrieval_text(pair), backend, None)?;
            let exclude: HashSet<String> = if res.exclude_self {
                HashSet::from([pair.pair_id.clone()])
            } else {
                HashSet::new()
            };
            res.retrieval_queries.fetch_add(1, Ordering::SeqCst);
            let neighbors = query_top_k(index, &query, res.k, Some(&exclude))?;
            neighbors_used = neighbors.iter().map(|n| n.pair_id.clone()).collect();
            let prompt = render_reasoning(pair, &neighbors)?;
            let verdict = complete_and_parse(
                res,
                &prompt,
                BinaryVocabulary::YesNo,
                SourceStage::Reasoning,
                &mut parse_failures,
                &mut cache_hits,
            )?;
            push(&mut stages, &verdict);
            verdict
        }
    };

    let final_verdict = if mode.uses_rules() {
        let ruleset = res.ruleset.as_ref().expect("ruleset loaded");
        // Machine checks over the initial verdict.
        let outcome = apply_machine_rules(pair, &initial, ruleset);
        stages.push(stage_entry(
            SourceStage::MachineRule,
            outcome.corrected.decision,
            &format!("violations: {:?}", outcome.violations),
        ));

        let reflected = if res.reflection_llm_pass {
            let prompt = render_reflection(pair, ruleset)?;
            let verdict = complete_and_parse(
                res,
                &prompt,
                BinaryVocabulary::YesNo,
                SourceStage::Reflection,
                &mut parse_failures,
                &mut cache_hits,
            )?;
            push(&mut stages, &verdict);
            verdict
        } else {
            outcome.corrected.clone()
        };

        // The reflection verdict wins, except that machine forcings are a
        // hard override applied last.
        let enforced = apply_machine_rules(pair, &reflected, ruleset);
        if enforced.changed {
            stages.push(stage_entry(
                SourceStage::MachineRule,
                enforced.corrected.decision,
                &enforced.corrected.raw_evidence,
            ));
        }
        enforced.corrected
    } else {
        initial
    };

    Ok(PredictionRecord {
        pair_id: pair.pair_id.clone(),
        mode,
        stage_verdicts: stages,
        final_verdict,
        neighbors_used,
        parse_failures,
        cache_hits,
    })
}

/// Runs one prediction technique over the evaluation split, writing one
/// JSON-lines record per pair in input order. Gateway failures quarantine
/// the pair; the run continues.
pub fn cmd_predict(config: &PipelineConfig, mode: Mode) -> Result<PredictOutput, PipelineError> {
    let (pairs, split) = config.load_split()?;
    let eval_pairs = config.chosen_split(&split)?;

    let gateway = if mode.uses_llm() {
        Some(config.build_gateway()?)
    } else {
        None
    };

    let index = if mode.uses_retrieval() {
        let path = config.index_path();
        if !path.exists() {
            return Err(PipelineError::MissingPrerequisite {
                mode: mode.to_string(),
                artifact: format!("index file {}", path.display()),
            });
        }
        Some(load_index(&path, &pairs)?)
    } else {
        None
    };

    let ruleset = if mode.uses_rules() {
        match &config.rules.ruleset_path {
            Some(path) if path.exists() => Some(ValidationRuleSet::load(path)?),
            Some(path) => {
                return Err(PipelineError::MissingPrerequisite {
                    mode: mode.to_string(),
                    artifact: format!("ruleset file {}", path.display()),
                })
            }
            None => Some(default_ruleset()),
        }
    } else {
        None
    };

    let exemplars = if matches!(mode, Mode::FewShot | Mode::FewShotCot) {
        let chosen: Vec<CommentEditPair> = if config.few_shot.exemplar_ids.is_empty() {
            let first_valid = split.train.iter().find(|p| p.label == Some(Label::Valid));
            let first_invalid = split.train.iter().find(|p| p.label == Some(Label::Invalid));
            first_valid.into_iter().chain(first_invalid).cloned().collect()
        } else {
            let by_id: HashMap<&str, &CommentEditPair> =
                pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect();
            config
                .few_shot
                .exemplar_ids
                .iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|p| (*p).clone())
                        .ok_or_else(|| PipelineError::UnknownPairId(id.clone()))
                })
                .collect::<Result<_, _>>()?
        };
        if chosen.is_empty() || chosen.iter().any(|p| p.label.is_none()) {
            return Err(PipelineError::MissingPrerequisite {
                mode: mode.to_string(),
                artifact: "labeled few-shot exemplars".to_string(),
            });
        }
        chosen
    } else {
        Vec::new()
    };

    let model = if mode == Mode::FeaturesLr {
        let path = config.model_path();
        if !path.exists() {
            return Err(PipelineError::MissingPrerequisite {
                mode: mode.to_string(),
                artifact: format!("model file {}", path.display()),
            });
        }
        Some(SavedModel::load(&path)?)
    } else {
        None
    };

    let resources = PredictResources {
        gateway,
        index,
        ruleset,
        exemplars,
        model,
        embedding: if mode.uses_retrieval() {
            Some(config.embedding_backend()?)
        } else {
            None
        },
        params: config.decoding_params(),
        default_verdict: config.default_verdict_label(),
        k: config.retrieval.k,
        exclude_self: config.retrieval.exclude_self,
        reflection_llm_pass: config.predict.reflection_llm_pass,
        retrieval_queries: AtomicUsize::new(0),
    };

    let outcomes = parallel_map(eval_pairs, config.gateway.parallelism, |pair| {
        predict_one(pair, mode, &resources).map_err(|e| e.to_string())
    });

    let mut records = Vec::new();
    let mut quarantined = Vec::new();
    for (pair, outcome) in eval_pairs.iter().zip(outcomes) {
        match outcome {
            Ok(record) => records.push(record),
            Err(error) => quarantined.push(QuarantinedPair {
                pair_id: pair.pair_id.clone(),
                error,
            }),
        }
    }

    std::fs::create_dir_all(&config.output_dir)?;
    let predictions_path = config.output_dir.join(format!("predictions-{mode}.jsonl"));
    let mut body = String::new();
    for record in &records {
        body.push_str(&serde_json::to_string(record)?);
        body.push('\n');
    }
    std::fs::write(&predictions_path, body)?;

    let quarantine_path = config.output_dir.join(format!("quarantine-{mode}.json"));
    let mut qbody = serde_json::to_string_pretty(&quarantined)?;
    qbody.push('\n');
    std::fs::write(&quarantine_path, qbody)?;

    let (llm_completions, backend_calls) = resources
        .gateway
        .as_ref()
        .map(|g| (g.completions(), g.backend_calls()))
        .unwrap_or((0, 0));
    let retrieval_queries = resources.retrieval_queries.load(Ordering::SeqCst) as u64;

    let mut builder = ManifestBuilder::new("predict", config, &pairs)
        .mode(mode)
        .ruleset(resources.ruleset.as_ref().map(|r| r.digest()))
        .total("predicted", records.len() as u64)
        .total("quarantined", quarantined.len() as u64)
        .total("llm_completions", llm_completions)
        .total("backend_calls", backend_calls)
        .total("retrieval_queries", retrieval_queries);
    if mode.uses_retrieval() {
        builder = builder.index(Some(file_digest(&config.index_path())?));
    }
    if mode == Mode::FeaturesLr {
        builder = builder.model(Some(file_digest(&config.model_path())?));
    }
    if let Some(gateway) = &resources.gateway {
        builder = builder.backend(gateway.backend_id());
    }
    builder.write(&config.output_dir.join(format!("manifest-predict-{mode}.json")))?;

    Ok(PredictOutput {
        records,
        quarantined,
        predictions_path,
        llm_completions,
        backend_calls,
        retrieval_queries,
    })
}

pub(crate) fn read_prediction_records(path: &Path) -> Result<Vec<PredictionRecord>, PipelineError> {
    let content = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for line in content.lines() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line)?);
    }
    Ok(records)
}

/// Scores Valid-predicted pairs for the post-update task: render, complete,
/// extract the code block, and compare against the reference edit.
pub fn cmd_apu(
    config: &PipelineConfig,
    predictions_path: &Path,
    corpus_bleu: bool,
) -> Result<ApuScore, PipelineError> {
    let pairs = config.load_pairs()?;
    let by_id: HashMap<&str, &CommentEditPair> =
        pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    let records = read_prediction_records(predictions_path)?;
    let gateway = config.build_gateway()?;
    let params = config.decoding_params();

    let valid_pairs: Vec<&CommentEditPair> = records
        .iter()
        .filter(|r| r.final_verdict.decision == Label::Valid)
        .map(|r| {
            by_id
                .get(r.pair_id.as_str())
                .copied()
                .ok_or_else(|| PipelineError::UnknownPairId(r.pair_id.clone()))
        })
        .collect::<Result<_, _>>()?;

    let outcomes = parallel_map(&valid_pairs, config.gateway.parallelism, |pair| {
        let prompt = render_apu(&pair.code_before, &pair.comment_text);
        gateway
            .complete(&prompt, &params)
            .map(|completion| {
                let candidate = extract_code_block(&completion.raw_text);
                let instance = ApuInstance {
                    pair_id: pair.pair_id.clone(),
                    em: exact_match(&candidate, &pair.code_after),
                    bleu: bleu4_addone(&candidate, &pair.code_after),
                };
                (instance, candidate)
            })
            .map_err(|e| e.to_string())
    });

    let mut instances = Vec::new();
    let mut candidates: Vec<(String, String)> = Vec::new();
    let mut quarantined = Vec::new();
    for (pair, outcome) in valid_pairs.iter().zip(outcomes) {
        match outcome {
            Ok((instance, candidate)) => {
                candidates.push((candidate, pair.code_after.clone()));
                instances.push(instance);
            }
            Err(error) => quarantined.push(QuarantinedPair {
                pair_id: pair.pair_id.clone(),
                error,
            }),
        }
    }
    let score = ApuScore::from_instances(instances);

    #[derive(Serialize)]
    struct ApuFile<'a> {
        em_rate: f64,
        bleu4: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        bleu4_corpus: Option<f64>,
        records: &'a [ApuInstance],
        quarantined: &'a [QuarantinedPair],
    }

    let bleu4_corpus = if corpus_bleu {
        let refs: Vec<(&str, &str)> = candidates
            .iter()
            .map(|(c, r)| (c.as_str(), r.as_str()))
            .collect();
        Some(crate::metrics::bleu4_addone_corpus(&refs))
    } else {
        None
    };

    let mode_tag = predictions_path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("predictions-"))
        .unwrap_or("run")
        .to_string();
    std::fs::create_dir_all(&config.output_dir)?;
    let out_path = config.output_dir.join(format!("apu-{mode_tag}.json"));
    let mut body = serde_json::to_string_pretty(&ApuFile {
        em_rate: score.em_rate,
        bleu4: score.bleu4,
        bleu4_corpus,
        records: &score.records,
        quarantined: &quarantined,
    })?;
    body.push('\n');
    std::fs::write(&out_path, body)?;

    ManifestBuilder::new("apu", config, &pairs)
        .backend(gateway.backend_id())
        .total("scored", score.records.len() as u64)
        .total("quarantined", quarantined.len() as u64)
        .total("llm_completions", gateway.completions())
        .write(&config.output_dir.join(format!("manifest-apu-{mode_tag}.json")))?;

    Ok(score)
}
