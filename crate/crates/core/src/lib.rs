//! Core library for comment-driven code maintenance on Q&A platforms.
//!
//! Implements the full VCP (valid comment-edit prediction) workflow: corpus
//! handling, lexical diff utilities, embedding retrieval, prompt rendering,
//! an LLM gateway with caching and offline mocks, machine-checkable
//! validation rules, classical baselines (heuristic matching and logistic
//! regression over engineered features), evaluation metrics, and the
//! end-to-end pipeline commands the `reflect-pipe` CLI exposes. The same
//! workflow extends to APU (automatic post updating) scoring.

pub mod baselines;
pub mod corpus;
pub mod digest;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod prompting;
pub mod retrieval;
pub mod rules;
pub mod textdiff;

pub use corpus::{CommentEditPair, CorpusStats, DatasetSplit, Label};
pub use gateway::{ChatBackend, DecodingParams, Gateway, Verdict};
pub use metrics::{ClassReport, ConfusionMatrix};
pub use pipeline::{Mode, PipelineConfig, PredictionRecord};
pub use retrieval::{Neighbor, VectorIndex};
pub use rules::{ValidationRule, ValidationRuleSet};
