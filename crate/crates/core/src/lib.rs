//! Interpretable zero-shot ECG diagnosis.
//!
//! An ECG embedding is compared against the text embeddings of expert-reviewed
//! positive and negative observations for each condition. Per-observation
//! similarities are aggregated into a positive score, a negative score and a
//! possibility score, so every prediction can be traced back to the findings
//! that drove it.
//!
//! Modules:
//! - [`kb`]: observation candidates, candidate pools, expert review, knowledge base export.
//! - [`embed`]: embedding vectors, the `ZEB1` store format, embedding providers.
//! - [`infer`]: the scoring rule and threshold classification.
//! - [`eval`]: ROC AUC, confusion metrics, label alias mapping, benchmarks.
//! - [`llmgen`]: prompt rendering and chat-completion fan-out for candidate generation.
//! - [`study`]: blinded reader-study sampling and reporting.

pub mod embed;
pub mod eval;
pub mod infer;
pub mod kb;
pub mod llmgen;
pub mod study;
